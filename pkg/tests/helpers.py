import numpy as np

from navmem.attention import KVBlock


def blk(gid, tokens=4, fill=0.0):
    """Small synthetic block: 2 layers, 2 heads, head_dim 4."""
    shape = (2, 2, tokens, 4)
    return KVBlock(gid, np.full(shape, fill, np.float32), np.full(shape, -fill, np.float32))

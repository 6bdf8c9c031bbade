"""
随机数工具
每个试验拥有独立的随机流，种子由主种子和试验序号派生，与执行顺序无关
"""

from typing import List, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """SplitMix64 雪崩混合"""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """派生第 index 个子种子：splitmix64(master + (index + 1) * gamma)"""
    return splitmix64((master_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


class RandomStream:
    """带缓冲的均匀随机流

    numpy Generator 逐个取标量很慢，这里按块预取，取值顺序与逐个调用
    ``Generator.random`` 完全一致，因此相同种子可逐位复现。
    """

    def __init__(self, seed: int, block_size: int = 4096):
        self.seed = seed & MASK64
        self._generator = np.random.Generator(np.random.PCG64(self.seed))
        self._block_size = block_size
        self._buffer: List[float] = []
        self._index = 0

    def random(self) -> float:
        """[0, 1) 上的均匀数"""
        if self._index >= len(self._buffer):
            self._buffer = self._generator.random(self._block_size).tolist()
            self._index = 0
        value = self._buffer[self._index]
        self._index += 1
        return value

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def integer(self, n: int) -> int:
        """[0, n) 上的均匀整数"""
        return min(int(self.random() * n), n - 1)

    def weighted_index(self, weights: Sequence[float]) -> int:
        """按权重抽取下标，权重无需归一化"""
        total = sum(weights)
        u = self.random() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0.0:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        # 浮点累加误差兜底
        return last

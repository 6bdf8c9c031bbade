"""
统计指标模块
访问频率矩阵、区域频率、阈值图、等级划分、频率-复杂度聚类与散点图，以及单条轨迹的区域序列
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .floorplan import ComplexityReport, DomainId, FloorPlan
from .trajectory import Trajectory
from ..utils.errors import ArgumentError

DEFAULT_TIE_EPSILON = 0.005
THRESHOLD_GRID: Tuple[float, ...] = (0.0, 0.05, 0.10, 0.15)
DEFAULT_FREQUENCY_CUTS: Tuple[float, float] = (0.12, 0.20)
DEFAULT_COMPLEXITY_CUTS: Tuple[float, float] = (0.12, 0.20)


@dataclass(frozen=True, eq=False)
class FrequencyMatrix:
    """逐格访问频率 f(x)，墙格为 0，有访问时总和为 1"""
    f: np.ndarray
    n_trials: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.f.shape

    def at(self, pos) -> float:
        x, y = pos
        return float(self.f[y, x])


@dataclass(frozen=True)
class DomainFrequencies:
    f: Dict[DomainId, float]

    def to_dict(self) -> Dict[str, float]:
        return {d.value: v for d, v in sorted(self.f.items())}


@dataclass(frozen=True, eq=False)
class ThresholdMap:
    theta: float
    mask: np.ndarray


class Cluster(Enum):
    """频率-复杂度聚类"""
    LOW_FREQ_MODERATE_COMPLEXITY = 'low_freq_moderate_complexity'
    MODERATE_FREQ_LOW_COMPLEXITY = 'moderate_freq_low_complexity'
    HIGH_FREQ_HIGH_COMPLEXITY = 'high_freq_high_complexity'


# (频率等级, 复杂度等级)，0 低 1 中 2 高
_CLUSTER_LEVELS = {
    Cluster.LOW_FREQ_MODERATE_COMPLEXITY: (0, 1),
    Cluster.MODERATE_FREQ_LOW_COMPLEXITY: (1, 0),
    Cluster.HIGH_FREQ_HIGH_COMPLEXITY: (2, 2),
}


@dataclass(frozen=True)
class ClusterReport:
    assignment: Dict[DomainId, Cluster]

    def members(self, cluster: Cluster) -> List[DomainId]:
        return sorted(d for d, c in self.assignment.items() if c is cluster)

    def to_dict(self) -> Dict[str, List[str]]:
        return {c.value: [d.value for d in self.members(c)] for c in Cluster}


def _trial_cells(trajectory: Trajectory, plan: FloorPlan, index: int) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.empty(len(trajectory.samples), dtype=np.int64)
    ys = np.empty(len(trajectory.samples), dtype=np.int64)
    for i, s in enumerate(trajectory.samples):
        if not (float(s.x).is_integer() and float(s.y).is_integer()):
            raise ArgumentError(f"轨迹 {index} 第 {i} 个样本不是格坐标 ({s.x}, {s.y})")
        pos = (int(s.x), int(s.y))
        if not plan.is_open(pos):
            raise ArgumentError(f"轨迹 {index} 第 {i} 个样本 {pos} 不在平面图的可通行格上")
        xs[i], ys[i] = pos
    return xs, ys


def visit_counts(trajectories: Sequence[Trajectory], plan: FloorPlan, occupancy: bool = False) -> np.ndarray:
    """逐格计数：默认每次试验至多计 1，occupancy=True 时按每秒样本累计"""
    counts = np.zeros(plan.shape, dtype=np.int64)
    for index, trajectory in enumerate(trajectories):
        xs, ys = _trial_cells(trajectory, plan, index)
        if occupancy:
            np.add.at(counts, (ys, xs), 1)
        else:
            flat = np.unique(ys * plan.width + xs)
            counts.flat[flat] += 1
    return counts


def visit_frequency(trajectories: Sequence[Trajectory], plan: FloorPlan, occupancy: bool = False) -> FrequencyMatrix:
    trajectories = list(trajectories)
    if not trajectories:
        raise ArgumentError("轨迹列表为空")
    counts = visit_counts(trajectories, plan, occupancy)
    total = counts.sum()
    f = counts / total if total > 0 else np.zeros(plan.shape)
    f.flags.writeable = False
    return FrequencyMatrix(f=f, n_trials=len(trajectories))


def domain_frequencies(fm: FrequencyMatrix, plan: FloorPlan) -> DomainFrequencies:
    if fm.shape != plan.shape:
        raise ArgumentError(f"频率矩阵尺寸 {fm.shape} 与平面图 {plan.shape} 不一致")
    return DomainFrequencies({d: float(fm.f[plan.domain_mask(d)].sum()) for d in plan.domains})


def threshold_map(fm: FrequencyMatrix, theta: float) -> ThresholdMap:
    if not 0.0 <= theta <= 1.0:
        raise ArgumentError(f"阈值必须在 [0, 1] 内: {theta}")
    mask = (fm.f > theta) & (fm.f > 0)
    mask.flags.writeable = False
    return ThresholdMap(theta=float(theta), mask=mask)


def _values(source) -> Dict[DomainId, float]:
    if isinstance(source, DomainFrequencies):
        return dict(source.f)
    if isinstance(source, ComplexityReport):
        return dict(source.c)
    return {DomainId(k): float(v) for k, v in source.items()}


def hierarchy(source: Union[DomainFrequencies, ComplexityReport, Mapping],
              tie_epsilon: float = DEFAULT_TIE_EPSILON) -> List[List[DomainId]]:
    """按值降序划分等级组

    组首（组内最大值）与后续区域之差不超过 tie_epsilon 时并入同一组，组内按字母排序。
    """
    if tie_epsilon < 0:
        raise ArgumentError(f"tie_epsilon 不能为负: {tie_epsilon}")
    values = _values(source)
    ordered = sorted(values, key=lambda d: (-values[d], d.value))
    groups: List[List[DomainId]] = []
    leader = None
    for d in ordered:
        if groups and values[leader] - values[d] <= tie_epsilon:
            groups[-1].append(d)
        else:
            groups.append([d])
            leader = d
    return [sorted(g, key=lambda d: d.value) for g in groups]


def format_hierarchy(groups: Sequence[Sequence[DomainId]]) -> str:
    """形如 F > E > C > {B, D} > A"""
    parts = []
    for g in groups:
        names = ', '.join(d.value for d in g)
        parts.append(names if len(g) == 1 else '{' + names + '}')
    return ' > '.join(parts)


def _level(value: float, cuts: Tuple[float, float]) -> int:
    low, high = cuts
    if value < low:
        return 0
    if value < high:
        return 1
    return 2


def clusters(df: Union[DomainFrequencies, Mapping], cr: Union[ComplexityReport, Mapping],
             frequency_cuts: Tuple[float, float] = DEFAULT_FREQUENCY_CUTS,
             complexity_cuts: Tuple[float, float] = DEFAULT_COMPLEXITY_CUTS) -> ClusterReport:
    """按频率和复杂度的低/中/高等级聚类

    组合不属于三个命名簇时归入等级空间中 L1 距离最近的簇，并列时按枚举顺序。
    """
    f = _values(df)
    c = _values(cr)
    if set(f) != set(c):
        raise ArgumentError(f"频率与复杂度的区域集合不一致: {sorted(d.value for d in f)} / "
                            f"{sorted(d.value for d in c)}")
    assignment = {}
    for d in sorted(f, key=lambda d: d.value):
        levels = (_level(f[d], frequency_cuts), _level(c[d], complexity_cuts))
        assignment[d] = min(
            Cluster,
            key=lambda k: abs(_CLUSTER_LEVELS[k][0] - levels[0]) + abs(_CLUSTER_LEVELS[k][1] - levels[1]),
        )
    return ClusterReport(assignment)


def frequency_ratio(df: Union[DomainFrequencies, Mapping], a: DomainId, b: DomainId) -> float:
    values = _values(df)
    a, b = DomainId(a), DomainId(b)
    if values.get(b, 0.0) == 0.0:
        raise ArgumentError(f"区域 {b.value} 的频率为 0，比值无定义")
    return values.get(a, 0.0) / values[b]


def l1_distance(a: Mapping, b: Mapping) -> float:
    """两个区域值映射之间的 L1 距离，缺失的区域按 0 计"""
    a = _values(a)
    b = _values(b)
    return float(sum(abs(a.get(d, 0.0) - b.get(d, 0.0)) for d in sorted(set(a) | set(b), key=lambda d: d.value)))


def frequency_to_csv(fm: FrequencyMatrix) -> str:
    return ''.join(','.join(repr(float(v)) for v in row) + '\n' for row in fm.f)


def frequency_image(fm: FrequencyMatrix) -> Image.Image:
    """灰度图：f=0 为白，最大 f 为黑"""
    peak = fm.f.max()
    if peak <= 0:
        gray = np.full(fm.shape, 255, dtype=np.uint8)
    else:
        gray = (255 - np.floor(255.0 * fm.f / peak + 0.5)).astype(np.uint8)
    return Image.fromarray(gray)


def threshold_image(tm: ThresholdMap) -> Image.Image:
    """超过阈值的格为黑"""
    return Image.fromarray(np.where(tm.mask, 0, 255).astype(np.uint8))


def domain_sequence(trajectory: Trajectory, plan: FloorPlan) -> List[DomainId]:
    """按时间顺序经过的区域，相邻重复合并；没有区域标签的格跳过"""
    xs, ys = _trial_cells(trajectory, plan, 0)
    sequence: List[DomainId] = []
    for x, y in zip(xs, ys):
        d = plan.domain_at((int(x), int(y)))
        if d is not None and (not sequence or sequence[-1] != d):
            sequence.append(d)
    return sequence


SCATTER_SIZE = 200
SCATTER_MARGIN = 24


def complexity_scatter_image(df: Union[DomainFrequencies, Mapping], cr: Union[ComplexityReport, Mapping],
                             size: int = SCATTER_SIZE) -> Image.Image:
    """频率-复杂度散点图：横轴 c(d)，纵轴 f(d)，两轴都从 0 到各自最大值，点旁标区域字母"""
    f = _values(df)
    c = _values(cr)
    if set(f) != set(c):
        raise ArgumentError(f"频率与复杂度的区域集合不一致: {sorted(d.value for d in f)} / "
                            f"{sorted(d.value for d in c)}")
    if size <= 2 * SCATTER_MARGIN:
        raise ArgumentError(f"散点图尺寸过小: {size}")

    image = Image.new('RGB', (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(image)
    lo, hi = SCATTER_MARGIN, size - SCATTER_MARGIN
    draw.line([(lo, lo), (lo, hi), (hi, hi)], fill=(0, 0, 0))

    c_peak = max(c.values(), default=0.0) or 1.0
    f_peak = max(f.values(), default=0.0) or 1.0
    for d in sorted(f, key=lambda d: d.value):
        px = lo + round((hi - lo) * c[d] / c_peak)
        py = hi - round((hi - lo) * f[d] / f_peak)
        draw.ellipse([px - 3, py - 3, px + 3, py + 3], fill=(200, 0, 0))
        draw.text((px + 5, py - 12), d.value, fill=(0, 0, 0))
    return image


def write_frequency_csv(fm: FrequencyMatrix, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(frequency_to_csv(fm), encoding='utf-8')
    return path

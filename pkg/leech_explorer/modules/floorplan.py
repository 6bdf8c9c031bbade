"""
平面图模块
负责平面图的解析、校验、查询，以及按拐角计算各区域的复杂度
"""

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from ..utils.errors import ArgumentError, DegenerateGeometryError, FormatError, ValidationError
from ..utils.logger import get_logger

logger = get_logger('FloorPlan')

Cell = Tuple[int, int]

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
ECE_PLAN_FILE = DATA_DIR / 'ece_floor.plan'

# 走廊右端，对应原始模板中箭头所指的放置位置
ECE_START: Cell = (105, 48)
# A 区左上角房间内的热源（2x2 格，约 2 mm 的烙铁头）
ECE_THERMAL_SOURCE: FrozenSet[Cell] = frozenset({(19, 5), (20, 5), (19, 6), (20, 6)})

NO_DOMAIN = -1
_HEADER_RE = re.compile(r'^scale_mm_per_cell=([0-9]+(?:\.[0-9]*)?|\.[0-9]+)$')


class CellKind(IntEnum):
    """格子类型"""
    WALL = 0
    FREE = 1
    EXIT = 2


class DomainId(str, Enum):
    """模板区域编号"""
    A = 'A'
    B = 'B'
    C = 'C'
    D = 'D'
    E = 'E'
    F = 'F'


DOMAINS: Tuple[DomainId, ...] = tuple(DomainId)
_DOMAIN_INDEX = {d: i for i, d in enumerate(DOMAINS)}


class Heading(IntEnum):
    """八个罗盘方向（y 轴向下，按顺时针排列）"""
    E = 0
    SE = 1
    S = 2
    SW = 3
    W = 4
    NW = 5
    N = 6
    NE = 7

    @property
    def vector(self) -> Cell:
        return _HEADING_VECTORS[self]

    @property
    def is_diagonal(self) -> bool:
        return self % 2 == 1

    def turn(self, notches: int) -> 'Heading':
        """顺时针旋转 notches 个 45 度"""
        return Heading((self + notches) % 8)


_HEADING_VECTORS = {
    Heading.E: (1, 0),
    Heading.SE: (1, 1),
    Heading.S: (0, 1),
    Heading.SW: (-1, 1),
    Heading.W: (-1, 0),
    Heading.NW: (-1, -1),
    Heading.N: (0, -1),
    Heading.NE: (1, -1),
}

CARDINALS: Tuple[Heading, ...] = (Heading.N, Heading.E, Heading.S, Heading.W)


@dataclass(frozen=True, eq=False)
class FloorPlan:
    """栅格平面图，解析后不可变，可在并发试验之间共享"""
    cells: np.ndarray
    domain_of: np.ndarray
    cell_size: float
    _open_rows: Tuple[bytes, ...] = field(init=False, repr=False)
    _exit_rows: Tuple[bytes, ...] = field(init=False, repr=False)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int8)
        domain_of = np.array(self.domain_of, dtype=np.int8)
        cells.flags.writeable = False
        domain_of.flags.writeable = False
        object.__setattr__(self, 'cells', cells)
        object.__setattr__(self, 'domain_of', domain_of)
        # 逐步模拟时按行查表，比 numpy 标量索引快得多
        object.__setattr__(self, '_open_rows', tuple(bytes(r) for r in (cells != CellKind.WALL).astype(np.uint8)))
        object.__setattr__(self, '_exit_rows', tuple(bytes(r) for r in (cells == CellKind.EXIT).astype(np.uint8)))

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def in_bounds(self, pos: Cell) -> bool:
        x, y = pos
        return 0 <= x < self.width and 0 <= y < self.height

    def is_open(self, pos: Cell) -> bool:
        """Free 或 Exit；越界视为不可通行"""
        x, y = pos
        if 0 <= x < self.width and 0 <= y < self.height:
            return self._open_rows[y][x] == 1
        return False

    def is_exit(self, pos: Cell) -> bool:
        x, y = pos
        if 0 <= x < self.width and 0 <= y < self.height:
            return self._exit_rows[y][x] == 1
        return False

    def kind(self, pos: Cell) -> CellKind:
        if not self.in_bounds(pos):
            raise ArgumentError(f"坐标越界: {pos}")
        x, y = pos
        return CellKind(int(self.cells[y, x]))

    def domain_at(self, pos: Cell) -> Optional[DomainId]:
        if not self.in_bounds(pos):
            raise ArgumentError(f"坐标越界: {pos}")
        x, y = pos
        index = int(self.domain_of[y, x])
        return None if index == NO_DOMAIN else DOMAINS[index]

    @property
    def open_mask(self) -> np.ndarray:
        return self.cells != CellKind.WALL

    @property
    def domains(self) -> Tuple[DomainId, ...]:
        """平面图中出现的区域（按字母序）"""
        present = np.unique(self.domain_of[self.cells == CellKind.FREE])
        return tuple(DOMAINS[int(i)] for i in present if i != NO_DOMAIN)

    def domain_mask(self, d: DomainId) -> np.ndarray:
        return self.domain_of == _DOMAIN_INDEX[DomainId(d)]

    def free_cells(self) -> Iterable[Cell]:
        ys, xs = np.nonzero(self.cells == CellKind.FREE)
        return [(int(x), int(y)) for x, y in zip(xs, ys)]


@dataclass(frozen=True)
class ComplexityReport:
    """各区域拐角数及归一化复杂度 c(d)"""
    corners_per_domain: Dict[DomainId, int]
    total_corners: int
    c: Dict[DomainId, float]


def domain_index(d: DomainId) -> int:
    return _DOMAIN_INDEX[DomainId(d)]


def parse_plan(text: str) -> FloorPlan:
    """解析平面图文本"""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise FormatError("平面图为空")

    match = _HEADER_RE.match(lines[0].strip())
    if not match:
        raise FormatError(f"第 1 行应为 scale_mm_per_cell=<小数>，实际为: {lines[0]!r}")
    cell_size = float(match.group(1))
    if cell_size <= 0:
        raise FormatError(f"比例必须为正: {cell_size}")

    rows = lines[1:]
    if not rows:
        raise FormatError("平面图缺少栅格行")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"第 {i + 2} 行长度 {len(row)} 与首行 {width} 不一致")

    cells = np.full((len(rows), width), CellKind.WALL, dtype=np.int8)
    domain_of = np.full((len(rows), width), NO_DOMAIN, dtype=np.int8)
    unlabeled = []
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == '#':
                continue
            if ch == 'X':
                cells[y, x] = CellKind.EXIT
            elif ch in _DOMAIN_CHARS:
                cells[y, x] = CellKind.FREE
                domain_of[y, x] = _DOMAIN_CHARS[ch]
            elif ch == '.':
                cells[y, x] = CellKind.FREE
                unlabeled.append((x, y))
            else:
                raise FormatError(f"第 {y + 2} 行第 {x + 1} 列出现未知字符 {ch!r}")

    _validate(cells, unlabeled)
    _label_exits(cells, domain_of)
    plan = FloorPlan(cells=cells, domain_of=domain_of, cell_size=cell_size)
    logger.debug(f"平面图解析完成: {plan.width}x{plan.height}, 区域 {[d.value for d in plan.domains]}")
    return plan


_DOMAIN_CHARS = {d.value: i for i, d in enumerate(DOMAINS)}


def _validate(cells: np.ndarray, unlabeled) -> None:
    height, width = cells.shape
    if width < 3 or height < 3:
        raise ValidationError(f"平面图至少为 3x3，实际为 {width}x{height}")

    border = np.concatenate([cells[0, :], cells[-1, :], cells[:, 0], cells[:, -1]])
    if np.any(border == CellKind.FREE):
        raise ValidationError("边界格只能是墙或出口")

    if unlabeled:
        x, y = unlabeled[0]
        raise ValidationError(f"空闲格 ({x}, {y}) 缺少区域标签")

    if not np.any(cells == CellKind.FREE):
        raise ValidationError("平面图没有空闲格")

    _, n_components = ndimage.label(cells != CellKind.WALL, structure=ndimage.generate_binary_structure(2, 1))
    if n_components != 1:
        raise ValidationError(f"可通行区域不连通（{n_components} 个连通块）")


def _label_exits(cells: np.ndarray, domain_of: np.ndarray) -> None:
    """出口继承最近空闲格的区域，保证每个可到达格都属于某个区域"""
    exits = cells == CellKind.EXIT
    if not np.any(exits):
        return
    _, (iy, ix) = ndimage.distance_transform_edt(cells != CellKind.FREE, return_indices=True)
    domain_of[exits] = domain_of[iy[exits], ix[exits]]


def serialize_plan(plan: FloorPlan) -> str:
    """序列化为平面图文本，parse_plan 的逆运算"""
    lines = [f"scale_mm_per_cell={plan.cell_size!r}"]
    for y in range(plan.height):
        row = []
        for x in range(plan.width):
            kind = plan.cells[y, x]
            if kind == CellKind.WALL:
                row.append('#')
            elif kind == CellKind.EXIT:
                row.append('X')
            else:
                row.append(DOMAINS[int(plan.domain_of[y, x])].value)
        lines.append(''.join(row))
    return '\n'.join(lines) + '\n'


def load_plan(path: Union[str, Path]) -> FloorPlan:
    """从文件加载平面图"""
    path = Path(path)
    logger.info(f"加载平面图: {path}")
    return parse_plan(path.read_text(encoding='utf-8'))


def load_bundled_plan() -> FloorPlan:
    """加载随包附带的 ECE 楼层模板"""
    return load_plan(ECE_PLAN_FILE)


def _corner_tally(plan: FloorPlan) -> Dict[DomainId, int]:
    """在每个格点的 2x2 邻域上统计拐角

    奇数个可通行格（1 个为凸角、3 个为凹角）记 1 个拐角，对角棋盘形记 2 个；
    拐角归属于邻域内空闲格中字母序最小的区域，不接触空闲格的格点不计。
    """
    open_ = np.pad(plan.cells != CellKind.WALL, 1, constant_values=False)
    a = open_[:-1, :-1]
    b = open_[:-1, 1:]
    c = open_[1:, :-1]
    d = open_[1:, 1:]
    n_open = a.astype(np.int8) + b + c + d

    weight = np.where(n_open % 2 == 1, 1, 0)
    weight = np.where((n_open == 2) & (a == d), 2, weight)

    sentinel = len(DOMAINS)
    owner_cells = np.where(plan.cells == CellKind.FREE, plan.domain_of, sentinel).astype(np.int16)
    owner_cells = np.pad(owner_cells, 1, constant_values=sentinel)
    owner = np.minimum(
        np.minimum(owner_cells[:-1, :-1], owner_cells[:-1, 1:]),
        np.minimum(owner_cells[1:, :-1], owner_cells[1:, 1:]),
    )

    counted = (weight > 0) & (owner < sentinel)
    totals = np.bincount(owner[counted], weights=weight[counted], minlength=sentinel)
    return {d: int(totals[domain_index(d)]) for d in plan.domains}


def count_corners(plan: FloorPlan, d: DomainId) -> int:
    """区域 d 内墙体边界的拐角数（凸角与凹角都计）"""
    d = DomainId(d)
    tally = _corner_tally(plan)
    if d not in tally:
        raise ArgumentError(f"平面图中不存在区域 {d.value}")
    return tally[d]


def complexity(plan: FloorPlan) -> ComplexityReport:
    """各区域复杂度 c(d) = 区域拐角数 / 总拐角数"""
    tally = _corner_tally(plan)
    total = sum(tally.values())
    if total == 0:
        raise DegenerateGeometryError("平面图中没有任何拐角")
    c = {d: n / total for d, n in tally.items()}
    logger.debug(f"复杂度: {', '.join(f'{d.value}={v:.3f}' for d, v in c.items())}")
    return ComplexityReport(corners_per_domain=tally, total_corners=total, c=c)


def contact_walls(plan: FloorPlan, pos: Cell) -> FrozenSet[Heading]:
    """pos 的四邻域中为墙的方向；越界邻居（出口外侧）不算墙"""
    if not plan.in_bounds(pos) or not plan.is_open(pos):
        raise ArgumentError(f"{pos} 不是可通行格")
    x, y = pos
    walls = set()
    for heading in CARDINALS:
        dx, dy = heading.vector
        nx, ny = x + dx, y + dy
        if 0 <= nx < plan.width and 0 <= ny < plan.height and plan.cells[ny, nx] == CellKind.WALL:
            walls.add(heading)
    return frozenset(walls)


def count_rooms(plan: FloorPlan, corridor_cell: Cell, door_width: int = 4) -> int:
    """统计房间数

    用比门洞宽一格的方形结构元腐蚀可通行区域，门洞被切断，
    剩余连通块中除走廊所在的那个之外都算作房间。
    """
    size = door_width + 1
    eroded = ndimage.binary_erosion(plan.open_mask, structure=np.ones((size, size), dtype=bool), border_value=0)
    labels, n_components = ndimage.label(eroded, structure=ndimage.generate_binary_structure(2, 1))
    x, y = corridor_cell
    if not plan.in_bounds(corridor_cell) or labels[y, x] == 0:
        raise ArgumentError(f"走廊格 {corridor_cell} 在腐蚀后不存在，无法区分走廊与房间")
    return n_components - 1

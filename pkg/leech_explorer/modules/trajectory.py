"""
轨迹数据与 CSV 读写
CSV 表头为 step,x,y,mode,outcome，结局只写在最后一行
"""

import csv
import io
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .behavior import Mode
from .floorplan import Cell, FloorPlan
from ..utils.errors import ArgumentError, FormatError

CSV_HEADER = ('step', 'x', 'y', 'mode', 'outcome')
_INT_RE = re.compile(r'^-?\d+$')


class OutcomeKind(Enum):
    """试验结局"""
    ESCAPED = 'escaped'
    TIMED_OUT = 'timed_out'


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    step: Optional[int] = None

    @classmethod
    def escaped(cls, step: int) -> 'Outcome':
        return cls(OutcomeKind.ESCAPED, step)

    @classmethod
    def timed_out(cls) -> 'Outcome':
        return cls(OutcomeKind.TIMED_OUT)

    @property
    def is_escape(self) -> bool:
        return self.kind is OutcomeKind.ESCAPED


@dataclass(frozen=True)
class Sample:
    """一个带时间标签的位置样本；模拟轨迹为整数格坐标，提取轨迹为像素坐标"""
    step: int
    x: Union[int, float]
    y: Union[int, float]
    mode: Mode

    @property
    def pos(self) -> Tuple[Union[int, float], Union[int, float]]:
        return self.x, self.y


@dataclass(frozen=True)
class Trajectory:
    samples: Tuple[Sample, ...]
    outcome: Outcome

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, 'samples', samples)
        for prev, cur in zip(samples, samples[1:]):
            if cur.step <= prev.step:
                raise ArgumentError(f"样本时间必须严格递增: {prev.step} -> {cur.step}")
        if self.outcome.is_escape:
            if not samples or samples[-1].step != self.outcome.step:
                raise ArgumentError("逃逸轨迹的最后一个样本必须对应逃逸时刻")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> int:
        if not self.samples:
            return 0
        return self.samples[-1].step - self.samples[0].step

    def cells(self) -> List[Cell]:
        """整数格坐标序列；含小数坐标时需先配准"""
        out = []
        for i, s in enumerate(self.samples):
            if not (float(s.x).is_integer() and float(s.y).is_integer()):
                raise ArgumentError(f"第 {i} 个样本不是格坐标 ({s.x}, {s.y})，请先配准")
            out.append((int(s.x), int(s.y)))
        return out


def validate_on_plan(trajectory: Trajectory, plan: FloorPlan) -> None:
    """检查所有样本都落在平面图的可通行格上；错误信息给出 CSV 行号"""
    for i, s in enumerate(trajectory.samples):
        row = i + 2
        if not (float(s.x).is_integer() and float(s.y).is_integer()):
            raise ArgumentError(f"row {row}: 坐标 ({s.x}, {s.y}) 不是格坐标")
        pos = (int(s.x), int(s.y))
        if not plan.in_bounds(pos):
            raise ArgumentError(f"row {row}: 坐标 {pos} 超出平面图范围 {plan.width}x{plan.height}")
        if not plan.is_open(pos):
            raise ArgumentError(f"row {row}: 坐标 {pos} 位于墙内")


def _format_number(value: Union[int, float]) -> str:
    if isinstance(value, int) or float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def trajectory_to_csv(trajectory: Trajectory) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_HEADER)
    last = len(trajectory.samples) - 1
    for i, s in enumerate(trajectory.samples):
        outcome = trajectory.outcome.kind.value if i == last else ''
        writer.writerow((s.step, _format_number(s.x), _format_number(s.y), s.mode.value, outcome))
    return buffer.getvalue()


def _parse_number(text: str, row: int, column: str) -> Union[int, float]:
    text = text.strip()
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"row {row}: 列 {column} 不是数字: {text!r}") from None


def parse_trajectory(text: str) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise FormatError(f"轨迹 CSV 表头应为 {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise FormatError("轨迹 CSV 没有样本")

    samples: List[Sample] = []
    outcome_text = ''
    for i, r in enumerate(body):
        row = i + 2
        if len(r) != len(CSV_HEADER):
            raise FormatError(f"row {row}: 应有 {len(CSV_HEADER)} 列，实际 {len(r)} 列")
        step = _parse_number(r[0], row, 'step')
        if not isinstance(step, int):
            raise FormatError(f"row {row}: step 必须为整数")
        try:
            mode = Mode(r[3].strip())
        except ValueError:
            raise FormatError(f"row {row}: 未知模式 {r[3]!r}") from None
        samples.append(Sample(step, _parse_number(r[1], row, 'x'), _parse_number(r[2], row, 'y'), mode))
        if r[4].strip():
            if i != len(body) - 1:
                raise FormatError(f"row {row}: 结局只能出现在最后一行")
            outcome_text = r[4].strip()

    try:
        kind = OutcomeKind(outcome_text) if outcome_text else OutcomeKind.TIMED_OUT
    except ValueError:
        raise FormatError(f"未知结局 {outcome_text!r}") from None
    outcome = Outcome.escaped(samples[-1].step) if kind is OutcomeKind.ESCAPED else Outcome.timed_out()
    try:
        return Trajectory(tuple(samples), outcome)
    except ArgumentError as e:
        raise FormatError(str(e)) from None


def write_trajectory(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(trajectory_to_csv(trajectory))
    return path


def read_trajectory(path: Union[str, Path]) -> Trajectory:
    return parse_trajectory(Path(path).read_text(encoding='utf-8'))


def read_trajectories(paths: Iterable[Union[str, Path]]) -> List[Trajectory]:
    return [read_trajectory(p) for p in paths]


def make_trajectory(cells: Sequence[Cell], mode: Mode = Mode.UNKNOWN, start_step: int = 0,
                    outcome: Optional[Outcome] = None) -> Trajectory:
    """按每秒一个样本由格坐标序列构造轨迹"""
    samples = tuple(Sample(start_step + i, x, y, mode) for i, (x, y) in enumerate(cells))
    return Trajectory(samples, outcome or Outcome.timed_out())

"""
模拟引擎
运行单次试验与试验集合、检测逃逸、求解稳态温度场，并按区域访问频率标定行为参数
"""

import json
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .behavior import PARAM_NAMES, AgentState, BehaviorParams, Mode, draw_wall_side, move, transition
from .floorplan import DATA_DIR, Cell, CellKind, DomainId, FloorPlan, Heading
from .metrics import domain_frequencies, l1_distance, visit_frequency
from .trajectory import Outcome, Sample, Trajectory
from ..utils.errors import ArgumentError, ConvergenceError, FormatError
from ..utils.logger import get_logger
from ..utils.rng import RandomStream, derive_seed, splitmix64

logger = get_logger('Engine')

DEFAULT_MAX_STEPS = 1800
SOURCE_TEMP = 70.0
AMBIENT_TEMP = 20.0

# 标定搜索范围；速度取 (0, 3]，下界开区间
DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    'p0_return': (0.0, 1.0),
    'd_max': (5.0, 200.0),
    'p_rest_enter': (0.0, 1.0),
    'p_rest_exit': (0.0, 1.0),
    'p_swim_spont': (0.0, 1.0),
    'v_swim': (0.0, 3.0),
    'v_crawl': (0.0, 3.0),
    'v_explore': (0.0, 3.0),
    'turn_sigma_explore': (10.0, 180.0),
    'wall_follow_side_flip': (0.0, 1.0),
    'p_left_wall': (0.0, 1.0),
}

_CALIBRATION_SALT = 0xCA11_B8A7_E5EE_D000
TARGET_SUM_TOLERANCE = 0.02
MEASURED_FREQUENCIES_FILE = DATA_DIR / 'measured_frequencies.json'


@dataclass(frozen=True, eq=False)
class ThermalField:
    """稳态温度场；墙格为 NaN"""
    temperature: np.ndarray
    fixed: np.ndarray
    iterations: int
    source_temp: float
    ambient: float
    _rows: Tuple[Tuple[float, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, '_rows', tuple(tuple(r) for r in self.temperature.tolist()))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.temperature.shape

    def covers(self, pos: Cell) -> bool:
        x, y = pos
        h, w = self.temperature.shape
        return 0 <= x < w and 0 <= y < h and not math.isnan(self._rows[y][x])

    def at(self, pos: Cell) -> float:
        x, y = pos
        return self._rows[y][x]


@dataclass(frozen=True)
class TrialConfig:
    plan: FloorPlan
    start_pos: Cell
    params: BehaviorParams
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int = 0
    field: Optional[ThermalField] = None
    initial_mode: Mode = Mode.SWIMMING
    initial_heading: Optional[Heading] = None

    def __post_init__(self):
        start = tuple(int(v) for v in self.start_pos)
        object.__setattr__(self, 'start_pos', start)
        if self.max_steps <= 0:
            raise ArgumentError(f"max_steps 必须为正: {self.max_steps}")
        if not self.plan.in_bounds(start) or self.plan.kind(start) is not CellKind.FREE:
            raise ArgumentError(f"起点 {start} 不是可通行的 Free 格")
        if self.initial_mode is Mode.UNKNOWN:
            raise ArgumentError("初始模式不能为 unknown")
        if self.field is not None and self.field.shape != self.plan.shape:
            raise ArgumentError(f"温度场尺寸 {self.field.shape} 与平面图 {self.plan.shape} 不一致")


@dataclass(frozen=True)
class CalibrationResult:
    best_params: BehaviorParams
    loss: float
    evaluations: int
    target: Dict[DomainId, float]
    seed: int
    best_frequencies: Dict[DomainId, float] = field(default_factory=dict)
    history: Tuple[float, ...] = ()

    def summary(self) -> dict:
        """JSON 摘要（不含时间戳）"""
        return {
            'loss': self.loss,
            'evaluations': self.evaluations,
            'seed': self.seed,
            'target': {d.value: v for d, v in sorted(self.target.items())},
            'best_frequencies': {d.value: v for d, v in sorted(self.best_frequencies.items())},
            'params': self.best_params.to_dict(),
        }


def run_trial(config: TrialConfig) -> Trajectory:
    """运行一次试验：每秒先做模式转换，再按新模式移动"""
    plan = config.plan
    params = config.params
    rng = RandomStream(config.seed)

    heading = config.initial_heading
    if heading is None:
        heading = Heading(rng.integer(8))
    wall_side = draw_wall_side(params, rng)

    state = AgentState(pos=config.start_pos, heading=Heading(heading), mode=config.initial_mode,
                       wall_side=wall_side)
    samples: List[Sample] = [Sample(0, state.pos[0], state.pos[1], state.mode)]

    for _ in range(config.max_steps):
        mode = transition(state, state.contact, params, rng)
        if mode is not state.mode:
            # 游泳落地时重新选择贴墙手侧
            if state.mode is Mode.SWIMMING and mode is Mode.CRAWLING:
                state = replace(state, mode=mode, wall_side=draw_wall_side(params, rng))
            else:
                state = replace(state, mode=mode)
        state = move(state, plan, params, config.field, rng)
        samples.append(Sample(state.step, state.pos[0], state.pos[1], state.mode))
        if plan.is_exit(state.pos):
            return Trajectory(tuple(samples), Outcome.escaped(state.step))

    return Trajectory(tuple(samples), Outcome.timed_out())


def trial_configs(plan: FloorPlan, start_pos: Cell, params: BehaviorParams, n: int, master_seed: int,
                  field: Optional[ThermalField] = None,
                  max_steps: int = DEFAULT_MAX_STEPS) -> List[TrialConfig]:
    """第 i 个试验的种子只取决于主种子和 i"""
    if n < 1:
        raise ArgumentError(f"试验次数必须至少为 1: {n}")
    return [
        TrialConfig(plan=plan, start_pos=start_pos, params=params, max_steps=max_steps,
                    seed=derive_seed(master_seed, i), field=field)
        for i in range(n)
    ]


def _map_trials(configs: Sequence[TrialConfig], workers: int, executor: Optional[Executor]) -> List[Trajectory]:
    if executor is not None:
        return list(executor.map(run_trial, configs, chunksize=_chunksize(len(configs), workers)))
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_trial, configs, chunksize=_chunksize(len(configs), workers)))
    return [run_trial(c) for c in configs]


def _chunksize(n: int, workers: int) -> int:
    return max(1, n // (4 * max(1, workers)))


def run_ensemble(plan: FloorPlan, start_pos: Cell, params: BehaviorParams, n: int, master_seed: int,
                 field: Optional[ThermalField] = None, max_steps: int = DEFAULT_MAX_STEPS,
                 workers: int = 1, executor: Optional[Executor] = None) -> List[Trajectory]:
    """运行 n 次独立试验，结果按试验序号排列，与并发度无关"""
    configs = trial_configs(plan, start_pos, params, n, master_seed, field, max_steps)
    logger.debug(f"运行 {n} 次试验 (seed={master_seed}, workers={workers})")
    trajectories = _map_trials(configs, workers, executor)
    escaped = sum(1 for t in trajectories if t.outcome.is_escape)
    logger.debug(f"试验完成: {escaped}/{n} 次逃逸")
    return trajectories


def thermal_field(plan: FloorPlan, source: Iterable[Cell], source_temp: float = SOURCE_TEMP,
                  ambient: float = AMBIENT_TEMP, tolerance: float = 1e-6,
                  max_iterations: int = 10 ** 6) -> ThermalField:
    """Jacobi 迭代求稳态温度场

    热源格固定为 source_temp，出口格固定为 ambient；墙绝热，
    每个自由格取其可通行四邻域的平均值。
    """
    source = {(int(x), int(y)) for x, y in source}
    if not source:
        raise ArgumentError("热源为空")
    for pos in source:
        if not plan.in_bounds(pos) or plan.kind(pos) is not CellKind.FREE:
            raise ArgumentError(f"热源格 {pos} 不是 Free 格")
    if not source_temp > ambient:
        raise ArgumentError(f"热源温度 {source_temp} 必须高于环境温度 {ambient}")

    open_mask = plan.open_mask
    exits = plan.cells == CellKind.EXIT
    fixed = exits.copy()
    xs, ys = zip(*source)
    fixed[list(ys), list(xs)] = True

    padded_open = np.pad(open_mask, 1).astype(np.float64)
    neighbours = (padded_open[:-2, 1:-1] + padded_open[2:, 1:-1]
                  + padded_open[1:-1, :-2] + padded_open[1:-1, 2:])
    update = open_mask & ~fixed & (neighbours > 0)
    inv_count = np.zeros_like(neighbours)
    inv_count[update] = 1.0 / neighbours[update]

    # 墙格取 0，使其对邻居的求和没有贡献
    temperature = np.where(open_mask, ambient, 0.0)
    temperature[list(ys), list(xs)] = source_temp
    constant = np.where(update, 0.0, temperature)

    padded = np.zeros((plan.height + 2, plan.width + 2))
    new = np.empty_like(temperature)
    diff = np.empty_like(temperature)

    iterations = 0
    converged = not update.any()
    while not converged:
        if iterations >= max_iterations:
            raise ConvergenceError(f"温度场在 {max_iterations} 次迭代内未收敛 (容差 {tolerance})")
        iterations += 1
        padded[1:-1, 1:-1] = temperature
        np.add(padded[:-2, 1:-1], padded[2:, 1:-1], out=new)
        new += padded[1:-1, :-2]
        new += padded[1:-1, 2:]
        new *= inv_count
        new += constant
        np.subtract(new, temperature, out=diff)
        np.abs(diff, out=diff)
        temperature, new = new, temperature
        converged = diff.max() < tolerance
        if iterations % 50000 == 0:
            logger.debug(f"温度场迭代 {iterations}: 最大更新 {diff.max():.3g}")

    logger.info(f"温度场收敛: {iterations} 次迭代")
    result = np.where(open_mask, temperature, np.nan)
    result.flags.writeable = False
    fixed.flags.writeable = False
    return ThermalField(temperature=result, fixed=fixed, iterations=iterations,
                        source_temp=float(source_temp), ambient=float(ambient))


def validate_target(target: Mapping) -> Dict[DomainId, float]:
    """目标频率需覆盖若干区域且总和为 1 ± 0.02"""
    if not target:
        raise ArgumentError("目标频率为空")
    parsed: Dict[DomainId, float] = {}
    for key, value in target.items():
        try:
            d = DomainId(key)
        except ValueError:
            raise ArgumentError(f"未知区域 {key!r}") from None
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ArgumentError(f"区域 {d.value} 的目标值不是数字: {value!r}") from None
        if value < 0 or math.isnan(value):
            raise ArgumentError(f"区域 {d.value} 的目标值不能为负: {value}")
        parsed[d] = value
    total = sum(parsed.values())
    if abs(total - 1.0) > TARGET_SUM_TOLERANCE:
        raise ArgumentError(f"目标频率之和为 {total:.3f}，应为 1 ± {TARGET_SUM_TOLERANCE}")
    return parsed


def load_target(path: Union[str, Path] = MEASURED_FREQUENCIES_FILE) -> Dict[DomainId, float]:
    """读取 {"A": 0.09, ...} 形式的目标频率 JSON"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise FormatError(f"目标频率文件 {path} 不是合法 JSON: {e}") from None
    if not isinstance(data, dict):
        raise FormatError(f"目标频率文件 {path} 顶层必须是对象")
    return validate_target(data)


def sample_params(bounds: Mapping[str, Tuple[float, float]], rng: RandomStream,
                  base: BehaviorParams) -> BehaviorParams:
    """在给定范围内均匀抽取一组参数；未列出的参数沿用 base"""
    values = {}
    for name in PARAM_NAMES:
        if name not in bounds:
            continue
        low, high = bounds[name]
        # 取 (low, high]，速度不会恰好为 0
        values[name] = high - (high - low) * rng.random()
    return replace(base, **values)


def _check_bounds(bounds: Mapping[str, Tuple[float, float]]) -> Dict[str, Tuple[float, float]]:
    checked = {}
    for name, pair in bounds.items():
        if name not in PARAM_NAMES:
            raise ArgumentError(f"未知参数 {name!r}")
        low, high = (float(v) for v in pair)
        if low > high:
            raise ArgumentError(f"参数 {name} 的范围无效: [{low}, {high}]")
        checked[name] = (low, high)
    return checked


def _evaluate(plan: FloorPlan, start_pos: Cell, params: BehaviorParams, target: Dict[DomainId, float],
              trials_per_eval: int, master_seed: int, max_steps: int, occupancy: bool,
              workers: int, executor: Optional[Executor]) -> Tuple[float, Dict[DomainId, float]]:
    trajectories = run_ensemble(plan, start_pos, params, trials_per_eval, master_seed,
                                max_steps=max_steps, workers=workers, executor=executor)
    df = domain_frequencies(visit_frequency(trajectories, plan, occupancy=occupancy), plan)
    return l1_distance(df.f, target), dict(df.f)


def calibrate(plan: FloorPlan, start_pos: Cell, target: Mapping, budget: int, trials_per_eval: int,
              master_seed: int, bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
              initial: Sequence[BehaviorParams] = (), max_steps: int = DEFAULT_MAX_STEPS,
              occupancy: bool = False, base_params: Optional[BehaviorParams] = None,
              workers: int = 1) -> CalibrationResult:
    """随机搜索标定

    所有候选共用同一组试验种子（公共随机数），候选参数的抽样流也由主种子派生，
    因此结果可由 master_seed 完全复现。initial 中的候选最先评估。
    """
    target = validate_target(target)
    if budget < 1:
        raise ArgumentError(f"评估预算必须至少为 1: {budget}")
    if trials_per_eval < 1:
        raise ArgumentError(f"每次评估的试验次数必须至少为 1: {trials_per_eval}")
    bounds = _check_bounds(DEFAULT_BOUNDS if bounds is None else bounds)
    base = base_params or BehaviorParams()
    sampler = RandomStream(splitmix64(master_seed ^ _CALIBRATION_SALT))

    initial = list(initial)[:budget]
    logger.info(f"开始标定: 预算 {budget}，每次 {trials_per_eval} 次试验，seed={master_seed}")

    best: Optional[Tuple[float, BehaviorParams, Dict[DomainId, float]]] = None
    history: List[float] = []

    def run(executor: Optional[Executor]):
        nonlocal best
        for i in range(budget):
            candidate = initial[i] if i < len(initial) else sample_params(bounds, sampler, base)
            loss, freqs = _evaluate(plan, start_pos, candidate, target, trials_per_eval, master_seed,
                                    max_steps, occupancy, workers, executor)
            history.append(loss)
            logger.debug(f"候选 {i + 1}/{budget}: loss={loss:.4f}")
            if best is None or loss < best[0]:
                best = (loss, candidate, freqs)
                logger.info(f"候选 {i + 1}/{budget} 刷新最优 loss={loss:.4f}")
            elif (i + 1) % 10 == 0:
                logger.info(f"标定进度 {i + 1}/{budget}，当前最优 loss={best[0]:.4f}")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            run(executor)
    else:
        run(None)

    loss, params, freqs = best
    logger.info(f"标定完成: 最优 loss={loss:.4f}，共评估 {budget} 个候选")
    return CalibrationResult(best_params=params, loss=loss, evaluations=budget, target=target,
                             seed=master_seed, best_frequencies=freqs, history=tuple(history))

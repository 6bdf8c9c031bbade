"""
行为自动机模块
水蛭的四种行为模式、接触触发的模式转换、随距离衰减的返回概率以及各模式的运动学
"""

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .floorplan import DATA_DIR, Cell, FloorPlan, Heading
from ..utils.errors import FormatError, ValidationError
from ..utils.rng import RandomStream

SWIM_TURN_SIGMA = 22.5  # 度
DEFAULT_PARAMS_FILE = DATA_DIR / 'default_params.cfg'


class Mode(Enum):
    """行为模式"""
    RESTING = 'resting'
    SWIMMING = 'swimming'
    CRAWLING = 'crawling'
    EXPLORING = 'exploring'
    # 仅用于从视频提取的轨迹，自动机不会产生
    UNKNOWN = 'unknown'


@dataclass(frozen=True)
class BehaviorParams:
    """行为参数（默认值为内置平面图上的标定结果，与 data/default_params.cfg 一致）"""
    p0_return: float = 0.9802
    d_max: float = 83.09
    p_rest_enter: float = 0.00075
    p_rest_exit: float = 0.5534
    p_swim_spont: float = 0.00017
    v_swim: float = 2.176
    v_crawl: float = 1.208
    v_explore: float = 0.643
    turn_sigma_explore: float = 36.66
    wall_follow_side_flip: float = 0.00015
    p_left_wall: float = 0.9333
    taxis_beta: float = 0.0

    def __post_init__(self):
        for name in ('p0_return', 'p_rest_enter', 'p_rest_exit', 'p_swim_spont', 'wall_follow_side_flip',
                     'p_left_wall'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} 必须在 [0, 1] 内: {value}")
        if not self.d_max > 0:
            raise ValidationError(f"d_max 必须为正: {self.d_max}")
        for name in ('v_swim', 'v_crawl', 'v_explore'):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} 不能为负: {getattr(self, name)}")
        if not self.turn_sigma_explore > 0:
            raise ValidationError(f"turn_sigma_explore 必须为正: {self.turn_sigma_explore}")
        if self.taxis_beta < 0:
            raise ValidationError(f"taxis_beta 不能为负: {self.taxis_beta}")

    def to_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PARAM_NAMES: Tuple[str, ...] = tuple(f.name for f in fields(BehaviorParams))


@dataclass(frozen=True)
class AgentState:
    """个体状态"""
    pos: Cell
    heading: Heading
    mode: Mode
    dist_since_contact: float = 0.0
    step: int = 0
    contact: bool = False
    # +1 右手贴墙，-1 左手贴墙
    wall_side: int = 1


def parse_params(text: str) -> BehaviorParams:
    """解析 key=value 参数文件，缺省的键取内置默认值"""
    values: Dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise FormatError(f"参数文件第 {lineno} 行缺少 '=': {raw!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in PARAM_NAMES:
            raise FormatError(f"参数文件第 {lineno} 行出现未知参数 {key!r}")
        try:
            values[key] = float(value)
        except ValueError:
            raise FormatError(f"参数文件第 {lineno} 行的值不是数字: {value!r}") from None
    return BehaviorParams(**values)


def serialize_params(params: BehaviorParams) -> str:
    return ''.join(f"{name}={getattr(params, name)!r}\n" for name in PARAM_NAMES)


def load_params(path: Union[str, Path]) -> BehaviorParams:
    return parse_params(Path(path).read_text(encoding='utf-8'))


def load_default_params() -> BehaviorParams:
    return load_params(DEFAULT_PARAMS_FILE)


def return_probability(d: float, params: BehaviorParams) -> float:
    """从探索模式回到爬行模式的概率，随距上次接触的距离线性衰减"""
    return params.p0_return * max(0.0, 1.0 - d / params.d_max)


def draw_wall_side(params: BehaviorParams, rng: RandomStream) -> int:
    """贴墙手侧：以 p_left_wall 的概率左手贴墙"""
    return -1 if rng.random() < params.p_left_wall else 1


def transition(state: AgentState, contact: bool, params: BehaviorParams, rng: RandomStream) -> Mode:
    """一步模式转换"""
    mode = state.mode
    if mode is Mode.SWIMMING:
        return Mode.CRAWLING if contact else Mode.SWIMMING
    if mode is Mode.CRAWLING:
        if contact:
            return Mode.EXPLORING
        # 单次均匀抽样划分 [0, p_swim) / [p_swim, p_swim + p_rest) / 其余
        u = rng.random()
        if u < params.p_swim_spont:
            return Mode.SWIMMING
        if u < params.p_swim_spont + params.p_rest_enter:
            return Mode.RESTING
        return Mode.CRAWLING
    if mode is Mode.EXPLORING:
        if not contact and rng.random() < return_probability(state.dist_since_contact, params):
            return Mode.CRAWLING
        return Mode.EXPLORING
    if mode is Mode.RESTING:
        return Mode.CRAWLING if rng.random() < params.p_rest_exit else Mode.RESTING
    return mode


# 转向偏移（单位 45 度），-3..4，+4 即掉头
_TURN_OFFSETS = (-3, -2, -1, 0, 1, 2, 3, 4)


@lru_cache(maxsize=64)
def _turn_kernel(sigma: float) -> Tuple[float, ...]:
    return tuple(math.exp(-((45.0 * abs(k)) ** 2) / (2.0 * sigma * sigma)) for k in _TURN_OFFSETS)


def _choose_heading(state: AgentState, sigma: float, field, beta: float, rng: RandomStream) -> Heading:
    """按高斯转向核选新方向；有温度场时按 exp(beta * dT) 重新加权"""
    weights = _turn_kernel(sigma)
    if field is not None and beta > 0.0:
        x, y = state.pos
        here = field.at((x, y))
        exponents: List[float] = []
        for k in _TURN_OFFSETS:
            dx, dy = state.heading.turn(k).vector
            target = (x + dx, y + dy)
            delta = field.at(target) - here if field.covers(target) else 0.0
            exponents.append(beta * delta)
        weights = _taxis_weights(weights, exponents)
    return state.heading.turn(_TURN_OFFSETS[rng.weighted_index(weights)])


def _taxis_weights(weights, exponents: List[float]) -> List[float]:
    """w * exp(z)，先减去最大指数，任意增益下都不会上溢"""
    top = max(exponents)
    return [w * math.exp(z - top) for w, z in zip(weights, exponents)]


def _diagonal_path(plan: FloorPlan, pos: Cell, dx: int, dy: int) -> bool:
    """对角位移拆成两次轴向移动，任一顺序两步都可通行即可，不会穿墙角"""
    x, y = pos
    if not plan.is_open((x + dx, y + dy)):
        return False
    return plan.is_open((x + dx, y)) or plan.is_open((x, y + dy))


def _can_step(plan: FloorPlan, pos: Cell, heading: Heading) -> bool:
    dx, dy = heading.vector
    if dx and dy:
        return _diagonal_path(plan, pos, dx, dy)
    return plan.is_open((pos[0] + dx, pos[1] + dy))


def _step_length(heading: Heading) -> int:
    return 2 if heading.is_diagonal else 1


def _n_moves(speed: float, rng: RandomStream) -> int:
    """小数速度用伯努利跳步实现"""
    whole = int(speed)
    return whole + (1 if rng.random() < speed - whole else 0)


def _wall_near(plan: FloorPlan, pos: Cell) -> bool:
    x, y = pos
    for heading in Heading:
        dx, dy = heading.vector
        if not plan.is_open((x + dx, y + dy)):
            return True
    return False


def _wall_on_side(plan: FloorPlan, pos: Cell, heading: Heading, side: int) -> bool:
    """手侧（前斜、正侧、后斜三格）是否有墙"""
    x, y = pos
    for notches in (side, 2 * side, 3 * side):
        dx, dy = heading.turn(notches).vector
        if not plan.is_open((x + dx, y + dy)):
            return True
    return False


def _swim(state: AgentState, plan: FloorPlan, params: BehaviorParams, field, rng: RandomStream):
    heading = _choose_heading(state, SWIM_TURN_SIGMA, field, params.taxis_beta, rng)
    pos = state.pos
    travelled = 0
    contact = False
    for _ in range(_n_moves(params.v_swim, rng)):
        if _can_step(plan, pos, heading):
            dx, dy = heading.vector
            pos = (pos[0] + dx, pos[1] + dy)
            travelled += _step_length(heading)
        else:
            contact = True
            dx, dy = heading.vector
            # 斜向受阻时沿仍可走的轴向滑动
            if dx and dy:
                if plan.is_open((pos[0] + dx, pos[1])):
                    pos = (pos[0] + dx, pos[1])
                    travelled += 1
                elif plan.is_open((pos[0], pos[1] + dy)):
                    pos = (pos[0], pos[1] + dy)
                    travelled += 1
            break
        if plan.is_exit(pos):
            break
    return pos, heading, travelled, contact, state.wall_side


def _explore(state: AgentState, plan: FloorPlan, params: BehaviorParams, field, rng: RandomStream):
    heading = _choose_heading(state, params.turn_sigma_explore, field, params.taxis_beta, rng)
    pos = state.pos
    travelled = 0
    contact = False
    for _ in range(_n_moves(params.v_explore, rng)):
        if not _can_step(plan, pos, heading):
            # 受阻后掉头，保持开阔区域内的占据分布均匀
            contact = True
            heading = heading.turn(4)
            break
        dx, dy = heading.vector
        pos = (pos[0] + dx, pos[1] + dy)
        travelled += _step_length(heading)
        if plan.is_exit(pos):
            break
    return pos, heading, travelled, contact, state.wall_side


def _follow_wall(plan: FloorPlan, pos: Cell, heading: Heading, side: int) -> Tuple[Cell, Heading, int, bool]:
    """一次贴墙单位移动，返回 (位置, 方向, 行程, 是否接触)"""
    if not _wall_near(plan, pos):
        # 周围一格内无墙：直线持续前进
        return _ahead(pos, heading), heading, _step_length(heading), False
    if heading.is_diagonal:
        heading = heading.turn(-side)
    # 墙只在另一侧时掉头，让墙回到手侧
    if not _wall_on_side(plan, pos, heading, side) and _wall_on_side(plan, pos, heading, -side):
        heading = heading.turn(4)
    if _wall_on_side(plan, pos, heading, side):
        candidates = (heading.turn(2 * side), heading, heading.turn(-2 * side), heading.turn(4))
    else:
        candidates = (heading,)
    contact = False
    for candidate in candidates:
        if candidate == heading and not plan.is_open(_ahead(pos, heading)):
            # 正前方受阻即机械接触
            contact = True
            continue
        if plan.is_open(_ahead(pos, candidate)):
            return _ahead(pos, candidate), candidate, 1, contact
    return pos, heading, 0, True


def _crawl(state: AgentState, plan: FloorPlan, params: BehaviorParams, field, rng: RandomStream):
    """
    贴墙爬行

    有温度场且增益为正时，每次单位移动在"继续贴墙"和"掉头换手"两者间
    按 exp(beta * dT) 加权选择，掉头一方再乘以转向核的掉头权重
    """
    side = -state.wall_side if rng.random() < params.wall_follow_side_flip else state.wall_side
    heading = state.heading
    pos = state.pos
    travelled = 0
    contact = False
    taxis = field is not None and params.taxis_beta > 0.0
    for _ in range(_n_moves(params.v_crawl, rng)):
        step = _follow_wall(plan, pos, heading, side)
        if taxis:
            back = _follow_wall(plan, pos, heading.turn(4), -side)
            here = field.at(pos)
            exponents = [params.taxis_beta * (field.at(step[0]) - here),
                         params.taxis_beta * (field.at(back[0]) - here)]
            weights = _taxis_weights((1.0, _turn_kernel(params.turn_sigma_explore)[-1]), exponents)
            if rng.weighted_index(weights) == 1:
                step = back
                side = -side
        pos, heading, length, hit = step
        travelled += length
        if hit:
            contact = True
            break
        if plan.is_exit(pos):
            break
    return pos, heading, travelled, contact, side


def _ahead(pos: Cell, heading: Heading) -> Cell:
    dx, dy = heading.vector
    return pos[0] + dx, pos[1] + dy


def move(state: AgentState, plan: FloorPlan, params: BehaviorParams, field,
         rng: RandomStream) -> AgentState:
    """按当前模式的运动学推进一步

    被墙挡住的位移记为接触；接触后 dist_since_contact 清零，否则累加走过的格数。
    """
    if state.mode is Mode.RESTING:
        return replace(state, step=state.step + 1, contact=False)

    if state.mode is Mode.SWIMMING:
        pos, heading, travelled, contact, side = _swim(state, plan, params, field, rng)
    elif state.mode is Mode.EXPLORING:
        pos, heading, travelled, contact, side = _explore(state, plan, params, field, rng)
    elif state.mode is Mode.CRAWLING:
        pos, heading, travelled, contact, side = _crawl(state, plan, params, field, rng)
    else:
        return replace(state, step=state.step + 1, contact=False)

    dist = 0.0 if contact else state.dist_since_contact + travelled
    return AgentState(
        pos=pos,
        heading=heading,
        mode=state.mode,
        dist_since_contact=dist,
        step=state.step + 1,
        contact=contact,
        wall_side=side,
    )

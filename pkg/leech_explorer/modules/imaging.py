"""
图像模块
按时间着色的轨迹叠加图，以及从实验帧序列中提取轨迹
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .behavior import Mode
from .floorplan import FloorPlan
from .trajectory import Outcome, Sample, Trajectory, validate_on_plan
from ..utils.errors import ArgumentError, ExtractionError
from ..utils.logger import get_logger

logger = get_logger('Imaging')

RGB = Tuple[int, int, int]

FRAME_SUFFIXES = ('.ppm', '.pgm', '.pnm')
DEFAULT_WALL_COLOR: RGB = (128, 128, 128)
FREE_COLOR: RGB = (255, 255, 255)


@dataclass(frozen=True)
class ColorStop:
    t: float
    rgb: RGB


# 蓝 -> 青 -> 黄 -> 红，节点等距
TIME_COLOR_STOPS: Tuple[ColorStop, ...] = (
    ColorStop(0.0, (0, 0, 255)),
    ColorStop(1 / 3, (0, 255, 255)),
    ColorStop(2 / 3, (255, 255, 0)),
    ColorStop(1.0, (255, 0, 0)),
)


def time_color(t: float) -> RGB:
    """归一化时间到颜色，分段线性插值，通道值四舍五入（半数进位）"""
    if not 0.0 <= t <= 1.0:
        raise ArgumentError(f"归一化时间必须在 [0, 1] 内: {t}")
    segments = len(TIME_COLOR_STOPS) - 1
    # 用 3t 定位分段，节点处结果精确
    s = t * segments
    index = min(int(s), segments - 1)
    frac = s - index
    a = TIME_COLOR_STOPS[index].rgb
    b = TIME_COLOR_STOPS[index + 1].rgb
    return tuple(int(math.floor(ca + (cb - ca) * frac + 0.5)) for ca, cb in zip(a, b))


def render_overlay(trajectory: Trajectory, plan: FloorPlan, zoom: int = 1,
                   wall_color: RGB = DEFAULT_WALL_COLOR, until: Optional[int] = None) -> Image.Image:
    """
    每个访问过的格按最后一次访问时间着色；单样本轨迹的时间归一化为 1

    until 给出时只绘制步数不超过 until 的样本（快照），
    颜色仍按整条轨迹的时长归一化，同一轨迹的各张快照颜色可比
    """
    if not trajectory.samples:
        raise ArgumentError("轨迹为空")
    if zoom < 1:
        raise ArgumentError(f"放大倍数必须至少为 1: {zoom}")
    validate_on_plan(trajectory, plan)

    first = trajectory.samples[0].step
    if until is not None and until < first:
        raise ArgumentError(f"快照时刻 {until} 早于第一个样本 ({first})")

    canvas = np.empty((plan.height, plan.width, 3), dtype=np.uint8)
    canvas[...] = wall_color
    canvas[plan.open_mask] = FREE_COLOR

    duration = trajectory.samples[-1].step - first
    for s in trajectory.samples:
        if until is not None and s.step > until:
            break
        t = (s.step - first) / duration if duration > 0 else 1.0
        canvas[int(s.y), int(s.x)] = time_color(t)

    if zoom > 1:
        canvas = np.repeat(np.repeat(canvas, zoom, axis=0), zoom, axis=1)
    return Image.fromarray(canvas)


def save_image(image: Image.Image, path: Union[str, Path]) -> Path:
    """按后缀写 PNG 或二进制 PPM"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in ('.png', '.ppm'):
        raise ArgumentError(f"不支持的图像格式: {path.name}（仅支持 .png 和 .ppm）")
    path.parent.mkdir(parents=True, exist_ok=True)
    if suffix == '.ppm':
        image.convert('RGB').save(path, format='PPM')
    else:
        image.save(path, format='PNG')
    logger.debug(f"已写入图像 {path}")
    return path


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """灰度 (H, W) 或 RGB (H, W, 3) 帧序列"""
    frames: Tuple[np.ndarray, ...]
    fps: float

    def __post_init__(self):
        frames = tuple(np.asarray(f) for f in self.frames)
        object.__setattr__(self, 'frames', frames)
        if not self.fps > 0:
            raise ArgumentError(f"帧率必须为正: {self.fps}")
        if frames:
            size = frames[0].shape[:2]
            for i, f in enumerate(frames):
                if f.shape[:2] != size:
                    raise ArgumentError(f"第 {i} 帧尺寸 {f.shape[:2]} 与首帧 {size} 不一致")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dimensions(self) -> Tuple[int, int]:
        """(宽, 高)，单位像素"""
        if not self.frames:
            return 0, 0
        h, w = self.frames[0].shape[:2]
        return w, h


def load_frames(directory: Union[str, Path], fps: float) -> FrameSequence:
    """按文件名字典序读取目录中的 PPM/PGM 帧"""
    directory = Path(directory)
    if not directory.is_dir():
        raise ArgumentError(f"帧目录不存在: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not paths:
        raise ExtractionError(f"目录 {directory} 中没有 PPM/PGM 帧")

    frames: List[np.ndarray] = []
    for p in paths:
        with Image.open(p) as img:
            img = img if img.mode in ('L', 'RGB') else img.convert('RGB')
            frames.append(np.asarray(img))
    logger.info(f"读取 {len(frames)} 帧: {directory}")
    return FrameSequence(tuple(frames), fps)


def _dark_mask(frame: np.ndarray, threshold: int, luminance: bool) -> np.ndarray:
    if frame.ndim == 2:
        return frame < threshold
    rgb = frame[..., :3].astype(np.float64)
    if luminance:
        return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2] < threshold
    return np.all(rgb < threshold, axis=-1)


def extract_trace(frames: FrameSequence, darkness_threshold: int = 40, sample_rate: float = 1.0,
                  luminance: bool = False) -> Trajectory:
    """按采样率抽帧，取所有暗像素的质心作为位置

    没有暗像素的帧沿用上一位置；样本序号即 step，模式记为 unknown。
    """
    if not 0 < darkness_threshold < 255:
        raise ArgumentError(f"暗度阈值必须在 (0, 255) 内: {darkness_threshold}")
    if not 0 < sample_rate <= frames.fps:
        raise ArgumentError(f"采样率 {sample_rate} 必须为正且不超过帧率 {frames.fps}")
    if not frames.frames:
        raise ExtractionError("帧序列为空")

    stride = max(1, int(math.floor(frames.fps / sample_rate + 0.5)))
    samples: List[Sample] = []
    last: Optional[Tuple[float, float]] = None
    carried = 0
    for step, index in enumerate(range(0, len(frames.frames), stride)):
        mask = _dark_mask(frames.frames[index], darkness_threshold, luminance)
        if mask.any():
            cy, cx = ndimage.center_of_mass(mask)
            last = (float(cx), float(cy))
        elif last is None:
            raise ExtractionError(f"第 {index} 帧没有低于阈值 {darkness_threshold} 的像素，无法确定初始位置")
        else:
            carried += 1
        samples.append(Sample(step, last[0], last[1], Mode.UNKNOWN))

    if carried:
        logger.warning(f"{carried} 个采样帧没有暗像素，沿用上一位置")
    logger.info(f"提取轨迹: {len(samples)} 个样本 (每 {stride} 帧取 1 帧)")
    return Trajectory(tuple(samples), Outcome.timed_out())


def register_trace(trajectory: Trajectory, scale: Union[float, Sequence[float]],
                   offset: Sequence[float] = (0.0, 0.0)) -> Trajectory:
    """像素坐标经仿射变换 cell = scale * pixel + offset 映射到平面图格（半数进位）"""
    if isinstance(scale, (int, float)):
        sx = sy = float(scale)
    else:
        sx, sy = (float(v) for v in scale)
    if sx <= 0 or sy <= 0:
        raise ArgumentError(f"缩放系数必须为正: ({sx}, {sy})")
    ox, oy = (float(v) for v in offset)
    samples = tuple(
        Sample(s.step, int(math.floor(sx * s.x + ox + 0.5)), int(math.floor(sy * s.y + oy + 0.5)), s.mode)
        for s in trajectory.samples
    )
    return Trajectory(samples, trajectory.outcome)

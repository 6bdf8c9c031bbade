"""
主应用控制器
负责把平面图、行为参数、引擎和指标串成完整的批处理流程，并记录输出文件摘要
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from ..config.config_manager import ConfigManager
from ..modules import engine, imaging, metrics
from ..modules.behavior import BehaviorParams, load_default_params, load_params, serialize_params
from ..modules.floorplan import (
    ECE_PLAN_FILE, ECE_START, ECE_THERMAL_SOURCE, Cell, DomainId, FloorPlan, complexity, load_plan,
)
from ..modules.trajectory import Trajectory, read_trajectory, validate_on_plan, write_trajectory
from ..utils.errors import ArgumentError, LeechExplorerError
from ..utils.logger import get_logger

PathLike = Union[str, Path]


def _digest(path: Path) -> str:
    """64 位 blake2b 摘要"""
    h = hashlib.blake2b(digest_size=8)
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + '\n'


@dataclass
class ArtifactWriter:
    """在输出目录中写文件并记录摘要，最后生成 MANIFEST"""
    root: Path
    written: List[Path] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArgumentError(f"无法创建输出目录 {self.root}: {e}") from None
        if not os.access(self.root, os.W_OK):
            raise ArgumentError(f"输出目录不可写: {self.root}")

    def path(self, name: str) -> Path:
        target = self.root / name
        target.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(target)
        return target

    def text(self, name: str, content: str) -> Path:
        target = self.path(name)
        with open(target, 'w', encoding='utf-8', newline='') as f:
            f.write(content)
        return target

    def json(self, name: str, data: Any) -> Path:
        return self.text(name, _dump_json(data))

    def image(self, name: str, image) -> Path:
        target = self.path(name)
        imaging.save_image(image, target)
        return target

    def trajectory(self, name: str, trajectory: Trajectory) -> Path:
        return write_trajectory(trajectory, self.path(name))

    def manifest(self, merge: bool = False) -> Path:
        """写 MANIFEST；merge=True 时保留已有清单中仍存在的文件（摘要重新计算）"""
        manifest = self.root / 'MANIFEST'
        names = {p.relative_to(self.root).as_posix() for p in self.written}
        if merge and manifest.is_file():
            for line in manifest.read_text(encoding='utf-8').splitlines():
                _, _, name = line.partition('  ')
                if name and (self.root / name).is_file():
                    names.add(name)
        lines = [f"{_digest(self.root / name)}  {name}" for name in sorted(names)]
        manifest.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
        return manifest


def _single_file_writer(output_path: PathLike) -> Tuple[ArtifactWriter, str]:
    """单文件输出：以其所在目录为根"""
    output_path = Path(output_path)
    return ArtifactWriter(output_path.parent), output_path.name


@dataclass(frozen=True)
class MetricsSummary:
    """一次分析的汇总结果"""
    frequencies: metrics.DomainFrequencies
    hierarchy: List[List[DomainId]]
    clusters: metrics.ClusterReport
    report: Dict[str, Any]


@dataclass(frozen=True)
class RunManifest:
    """simulate 的完整输入"""
    plan_path: Optional[Path]
    params_path: Optional[Path]
    start: Cell
    trials: int
    seed: int
    output_dir: Path
    max_steps: int = engine.DEFAULT_MAX_STEPS
    thermal_source: Optional[Tuple[Cell, ...]] = None
    taxis_beta: Optional[float] = None


class AppController:
    """主应用控制器"""

    def __init__(self, config: Optional[ConfigManager] = None, workers: Optional[int] = None):
        """初始化应用控制器"""
        self.logger = get_logger('AppController')
        self.config = config or ConfigManager()
        requested = self.config.resolve('general.workers', workers)
        self.workers = int(requested) if requested else (os.cpu_count() or 1)
        if self.workers < 1:
            raise ArgumentError(f"并发数必须至少为 1: {self.workers}")
        self.logger.debug(f"应用控制器初始化完成 (workers={self.workers})")

    # ---- 输入 ----

    def load_plan(self, path: Optional[PathLike] = None) -> FloorPlan:
        path = Path(path) if path is not None else Path(self.config.get('simulation.plan') or ECE_PLAN_FILE)
        if not path.is_file():
            raise ArgumentError(f"平面图文件不存在: {path}")
        plan = load_plan(path)
        self.logger.info(f"平面图 {path.name}: {plan.width}x{plan.height}，区域 {''.join(d.value for d in plan.domains)}")
        return plan

    def load_params(self, path: Optional[PathLike] = None) -> BehaviorParams:
        path = path if path is not None else self.config.get('simulation.params')
        if path is None:
            return load_default_params()
        path = Path(path)
        if not path.is_file():
            raise ArgumentError(f"参数文件不存在: {path}")
        return load_params(path)

    def default_start(self, plan_path: Optional[PathLike]) -> Cell:
        configured = self.config.get('simulation.start')
        if configured is not None:
            return int(configured[0]), int(configured[1])
        if plan_path is None:
            plan_path = self.config.get('simulation.plan')
        if plan_path is None or Path(plan_path).resolve() == ECE_PLAN_FILE.resolve():
            return ECE_START
        raise ArgumentError("自定义平面图需要指定起点 --start x,y")

    def _read_traces(self, paths: Sequence[PathLike], plan: FloorPlan) -> List[Trajectory]:
        traces = []
        for path in paths:
            path = Path(path)
            if not path.is_file():
                raise ArgumentError(f"轨迹文件不存在: {path}")
            try:
                trace = read_trajectory(path)
                validate_on_plan(trace, plan)
            except LeechExplorerError as e:
                raise type(e)(f"{path}: {e}") from None
            traces.append(trace)
        return traces

    # ---- 指标输出 ----

    def write_metrics(self, trajectories: Sequence[Trajectory], plan: FloorPlan, writer: ArtifactWriter,
                      extra: Optional[Dict[str, Any]] = None) -> MetricsSummary:
        """频率矩阵、区域频率、阈值图和汇总报告"""
        occupancy = bool(self.config.get('metrics.occupancy'))
        tie_epsilon = float(self.config.get('metrics.tie_epsilon'))
        thresholds = [float(t) for t in self.config.get('metrics.thresholds')]
        frequency_cuts = tuple(self.config.get('metrics.frequency_cuts'))
        complexity_cuts = tuple(self.config.get('metrics.complexity_cuts'))

        fm = metrics.visit_frequency(trajectories, plan, occupancy=occupancy)
        df = metrics.domain_frequencies(fm, plan)
        cr = complexity(plan)

        writer.text('frequency.csv', metrics.frequency_to_csv(fm))
        writer.image('frequency.png', metrics.frequency_image(fm))
        writer.json('domains.json', df.to_dict())
        for theta in thresholds:
            writer.image(f'threshold_{theta:.2f}.png', metrics.threshold_image(metrics.threshold_map(fm, theta)))
        writer.image('complexity_scatter.png', metrics.complexity_scatter_image(df, cr))

        groups = metrics.hierarchy(df, tie_epsilon)
        report_clusters = metrics.clusters(df, cr, frequency_cuts, complexity_cuts)
        try:
            ratio = metrics.frequency_ratio(df, DomainId.F, DomainId.E)
        except (ArgumentError, KeyError):
            ratio = None

        report = {
            'trials': len(trajectories),
            'escaped': sum(1 for t in trajectories if t.outcome.is_escape),
            'frequency_mode': 'occupancy' if occupancy else 'binary',
            'domain_frequencies': df.to_dict(),
            'tie_epsilon': tie_epsilon,
            'hierarchy': [[d.value for d in g] for g in groups],
            'hierarchy_text': metrics.format_hierarchy(groups),
            'clusters': report_clusters.to_dict(),
            'ratio_F_E': ratio,
            'complexity': {
                'total_corners': cr.total_corners,
                'corners': {d.value: n for d, n in sorted(cr.corners_per_domain.items())},
                'c': {d.value: v for d, v in sorted(cr.c.items())},
            },
            'domain_sequences': [''.join(d.value for d in metrics.domain_sequence(t, plan)) for t in trajectories],
        }
        if extra:
            report.update(extra)
        writer.json('report.json', report)
        self.logger.info(f"等级: {report['hierarchy_text']}")
        return MetricsSummary(df, groups, report_clusters, report)

    # ---- 子命令 ----

    def simulate(self, run: RunManifest) -> MetricsSummary:
        plan = self.load_plan(run.plan_path)
        params = self.load_params(run.params_path)
        if run.taxis_beta is not None:
            params = BehaviorParams(**{**params.to_dict(), 'taxis_beta': float(run.taxis_beta)})

        thermal = None
        if run.thermal_source:
            thermal = engine.thermal_field(
                plan, run.thermal_source,
                source_temp=float(self.config.get('thermal.source_temp')),
                ambient=float(self.config.get('thermal.ambient')),
                tolerance=float(self.config.get('thermal.tolerance')),
                max_iterations=int(self.config.get('thermal.max_iterations')),
            )

        writer = ArtifactWriter(run.output_dir)
        self.logger.info(f"开始模拟: {run.trials} 次试验，seed={run.seed}，起点 {run.start}")
        trajectories = engine.run_ensemble(plan, run.start, params, run.trials, run.seed, field=thermal,
                                           max_steps=run.max_steps, workers=self.workers)
        width = max(4, len(str(run.trials - 1)))
        for i, t in enumerate(trajectories):
            writer.trajectory(f'trajectories/trial_{i:0{width}d}.csv', t)

        extra = {
            'seed': run.seed,
            'start': list(run.start),
            'max_steps': run.max_steps,
            'params': params.to_dict(),
            'thermal_source': [list(c) for c in sorted(run.thermal_source)] if run.thermal_source else None,
        }
        summary = self.write_metrics(trajectories, plan, writer, extra)
        writer.manifest()
        self.logger.info(f"模拟完成，输出目录 {writer.root}")
        return summary

    def analyze(self, trace_paths: Sequence[PathLike], plan_path: Optional[PathLike],
                output_dir: PathLike) -> MetricsSummary:
        if not trace_paths:
            raise ArgumentError("至少需要一个轨迹文件")
        plan = self.load_plan(plan_path)
        traces = self._read_traces(trace_paths, plan)
        writer = ArtifactWriter(output_dir)
        summary = self.write_metrics(traces, plan, writer, {'traces': [Path(p).name for p in trace_paths]})
        writer.manifest()
        self.logger.info(f"分析完成: {len(traces)} 条轨迹，输出目录 {writer.root}")
        return summary

    def render(self, trace_path: PathLike, plan_path: Optional[PathLike], output_path: PathLike,
               zoom: Optional[int] = None, wall_color: Optional[Sequence[int]] = None,
               until: Optional[int] = None) -> Path:
        plan = self.load_plan(plan_path)
        trace = self._read_traces([trace_path], plan)[0]
        zoom = int(self.config.resolve('imaging.zoom', zoom))
        color = tuple(int(c) for c in self.config.resolve('imaging.wall_color', wall_color))
        image = imaging.render_overlay(trace, plan, zoom=zoom, wall_color=color, until=until)
        writer, name = _single_file_writer(output_path)
        path = writer.image(name, image)
        writer.manifest(merge=True)
        self.logger.info(f"叠加图已写入 {path} ({image.width}x{image.height})")
        return path

    def calibrate(self, plan_path: Optional[PathLike], target_path: Optional[PathLike], output_path: PathLike,
                  seed: int, budget: Optional[int] = None, trials_per_eval: Optional[int] = None,
                  start: Optional[Cell] = None, max_steps: Optional[int] = None) -> engine.CalibrationResult:
        plan = self.load_plan(plan_path)
        if target_path is not None and not Path(target_path).is_file():
            raise ArgumentError(f"目标频率文件不存在: {target_path}")
        target = engine.load_target(target_path if target_path is not None else engine.MEASURED_FREQUENCIES_FILE)
        start = start if start is not None else self.default_start(plan_path)
        bounds = self.config.get('calibration.bounds') or None
        base = self.load_params()

        # 当前参数（默认即内置标定值）作为第一个候选
        result = engine.calibrate(
            plan, start, target,
            budget=int(self.config.resolve('calibration.budget', budget)),
            trials_per_eval=int(self.config.resolve('calibration.trials_per_eval', trials_per_eval)),
            master_seed=seed,
            bounds=bounds,
            max_steps=int(self.config.resolve('simulation.max_steps', max_steps)),
            occupancy=bool(self.config.get('metrics.occupancy')),
            initial=[base],
            base_params=base,
            workers=self.workers,
        )

        writer, name = _single_file_writer(output_path)
        params_path = writer.text(name, serialize_params(result.best_params))
        summary_path = writer.json(Path(name).stem + '_summary.json', result.summary())
        writer.manifest(merge=True)
        self.logger.info(f"最优参数已写入 {params_path}，摘要 {summary_path.name}")
        return result

    def extract(self, frames_dir: PathLike, output_path: PathLike, fps: Optional[float] = None,
                threshold: Optional[int] = None, sample_rate: Optional[float] = None,
                luminance: Optional[bool] = None, scale: Optional[Sequence[float]] = None,
                offset: Optional[Sequence[float]] = None) -> Trajectory:
        frames = imaging.load_frames(frames_dir, float(self.config.resolve('imaging.fps', fps)))
        trace = imaging.extract_trace(
            frames,
            darkness_threshold=int(self.config.resolve('imaging.darkness_threshold', threshold)),
            sample_rate=float(self.config.resolve('imaging.sample_rate', sample_rate)),
            luminance=bool(self.config.resolve('imaging.luminance', luminance)),
        )
        if scale is not None:
            trace = imaging.register_trace(trace, scale, offset if offset is not None else (0.0, 0.0))
        writer, name = _single_file_writer(output_path)
        path = writer.trajectory(name, trace)
        writer.manifest(merge=True)
        self.logger.info(f"轨迹已写入 {path} ({len(trace)} 个样本)")
        return trace


def thermal_source_cells(text: str) -> Tuple[Cell, ...]:
    """解析 "x,y;x,y" 形式的热源；"ece" 表示内置平面图 A 区角落房间的热源"""
    if text.strip().lower() == 'ece':
        return tuple(sorted(ECE_THERMAL_SOURCE))
    cells = []
    for part in text.split(';'):
        part = part.strip()
        if part:
            cells.append(parse_cell(part))
    if not cells:
        raise ArgumentError(f"热源为空: {text!r}")
    return tuple(cells)


def parse_cell(text: str) -> Cell:
    try:
        x, y = (int(v.strip()) for v in text.split(','))
    except ValueError:
        raise ArgumentError(f"坐标格式应为 x,y: {text!r}") from None
    return x, y

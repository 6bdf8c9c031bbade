"""
命令行入口
子命令: simulate / analyze / render / calibrate / extract
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .config.config_manager import ConfigManager
from .core.app_controller import AppController, RunManifest, parse_cell, thermal_source_cells
from .utils.errors import LeechExplorerError
from .utils.logger import configure_logging, get_logger

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

PRECEDENCE_HELP = "参数优先级: 命令行参数 > 配置文件 (--config 或 $LEECH_EXPLORER_HOME/config.json) > 内置默认值"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是整数: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"必须至少为 1: {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是整数: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"不能为负: {value}")
    return value


def _cell(text: str) -> Tuple[int, int]:
    try:
        return parse_cell(text)
    except LeechExplorerError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _floats(count: Sequence[int]):
    def parse(text: str) -> Tuple[float, ...]:
        try:
            values = tuple(float(v) for v in text.split(','))
        except ValueError:
            raise argparse.ArgumentTypeError(f"不是数字列表: {text!r}") from None
        if len(values) not in count:
            raise argparse.ArgumentTypeError(f"应有 {' 或 '.join(map(str, count))} 个数: {text!r}")
        return values
    return parse


def _rgb(text: str) -> Tuple[int, int, int]:
    try:
        values = tuple(int(v) for v in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"颜色格式应为 r,g,b: {text!r}") from None
    if len(values) != 3 or not all(0 <= v <= 255 for v in values):
        raise argparse.ArgumentTypeError(f"颜色格式应为 r,g,b (0-255): {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='leech_explorer',
        description='水蛭平面图探索行为的个体模拟与分析',
        epilog=PRECEDENCE_HELP,
    )
    parser.add_argument('--config', type=Path, help='JSON 配置文件路径')
    parser.add_argument('--log-dir', type=Path, help='滚动日志文件目录（时间戳只写入日志文件）')
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='控制台日志级别')
    parser.add_argument('--workers', type=_non_negative_int,
                        help='并发进程数，0 表示全部可用核心；结果与并发度无关')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('simulate', help='运行试验集合并输出全部指标', epilog=PRECEDENCE_HELP)
    p.add_argument('--plan', type=Path, help='平面图文件（默认内置 ECE 平面图）')
    p.add_argument('--params', type=Path, help='key=value 行为参数文件（默认内置参数）')
    p.add_argument('--start', type=_cell, help='起点 x,y（内置平面图默认为走廊右端）')
    p.add_argument('-n', '--trials', type=_positive_int, help='试验次数')
    p.add_argument('--seed', type=int, help='主种子')
    p.add_argument('--max-steps', type=_positive_int, help='每次试验的最长秒数')
    p.add_argument('--thermal-source', help='热源格 "x,y;x,y"，或 "ece" 表示内置热源')
    p.add_argument('--taxis-beta', type=float, help='覆盖参数文件中的趋热增益')
    p.add_argument('-o', '--output', type=Path, required=True, help='输出目录')
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('analyze', help='对已有轨迹计算指标', epilog=PRECEDENCE_HELP)
    p.add_argument('traces', type=Path, nargs='+', help='轨迹 CSV 文件')
    p.add_argument('--plan', type=Path, help='平面图文件（默认内置 ECE 平面图）')
    p.add_argument('-o', '--output', type=Path, required=True, help='输出目录')
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser('render', help='绘制按时间着色的轨迹叠加图', epilog=PRECEDENCE_HELP)
    p.add_argument('trace', type=Path, help='轨迹 CSV 文件')
    p.add_argument('--plan', type=Path, help='平面图文件（默认内置 ECE 平面图）')
    p.add_argument('--zoom', type=_positive_int, help='放大倍数')
    p.add_argument('--wall-color', type=_rgb, help='墙体颜色 r,g,b')
    p.add_argument('--until', type=_non_negative_int, help='快照时刻：只绘制该步及之前的样本')
    p.add_argument('-o', '--output', type=Path, required=True, help='输出图像 (.png 或 .ppm)')
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser('calibrate', help='随机搜索标定行为参数', epilog=PRECEDENCE_HELP)
    p.add_argument('--plan', type=Path, help='平面图文件（默认内置 ECE 平面图）')
    p.add_argument('--target', type=Path, help='目标区域频率 JSON（默认使用实验测得的频率）')
    p.add_argument('--budget', type=_positive_int, help='评估的候选参数个数')
    p.add_argument('--trials-per-eval', type=_positive_int, help='每个候选的试验次数')
    p.add_argument('--seed', type=int, help='主种子')
    p.add_argument('--start', type=_cell, help='起点 x,y')
    p.add_argument('--max-steps', type=_positive_int, help='每次试验的最长秒数')
    p.add_argument('-o', '--output', type=Path, required=True,
                   help='最优参数文件；同目录写入 <名称>_summary.json')
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser('extract', help='从 PPM/PGM 帧序列提取轨迹', epilog=PRECEDENCE_HELP)
    p.add_argument('frames', type=Path, help='帧目录（按文件名排序）')
    p.add_argument('--fps', type=float, help='帧率')
    p.add_argument('--threshold', type=int, help='暗度阈值 (0-255)')
    p.add_argument('--sample-rate', type=float, help='采样频率 (Hz)')
    p.add_argument('--luminance', action='store_true', default=None, help='按亮度而非逐通道判断暗像素')
    p.add_argument('--scale', type=_floats((1, 2)), help='像素到格的缩放 s 或 sx,sy')
    p.add_argument('--offset', type=_floats((2,)), help='像素到格的偏移 ox,oy')
    p.add_argument('-o', '--output', type=Path, required=True, help='输出轨迹 CSV')
    p.set_defaults(handler=cmd_extract)

    return parser


def cmd_simulate(app: AppController, args: argparse.Namespace) -> int:
    config = app.config
    run = RunManifest(
        plan_path=args.plan,
        params_path=args.params,
        start=args.start if args.start is not None else app.default_start(args.plan),
        trials=int(config.resolve('simulation.trials', args.trials)),
        seed=int(config.resolve('simulation.seed', args.seed)),
        output_dir=args.output,
        max_steps=int(config.resolve('simulation.max_steps', args.max_steps)),
        thermal_source=thermal_source_cells(args.thermal_source) if args.thermal_source else None,
        taxis_beta=args.taxis_beta,
    )
    summary = app.simulate(run)
    print(f"hierarchy: {summary.report['hierarchy_text']}")
    return EXIT_OK


def cmd_analyze(app: AppController, args: argparse.Namespace) -> int:
    summary = app.analyze(args.traces, args.plan, args.output)
    print(f"hierarchy: {summary.report['hierarchy_text']}")
    return EXIT_OK


def cmd_render(app: AppController, args: argparse.Namespace) -> int:
    app.render(args.trace, args.plan, args.output, zoom=args.zoom, wall_color=args.wall_color,
               until=args.until)
    return EXIT_OK


def cmd_calibrate(app: AppController, args: argparse.Namespace) -> int:
    result = app.calibrate(
        args.plan, args.target, args.output,
        seed=int(app.config.resolve('simulation.seed', args.seed)),
        budget=args.budget,
        trials_per_eval=args.trials_per_eval,
        start=args.start,
        max_steps=args.max_steps,
    )
    print(f"loss: {result.loss:.6f} ({result.evaluations} evaluations)")
    return EXIT_OK


def cmd_extract(app: AppController, args: argparse.Namespace) -> int:
    scale = None
    if args.scale is not None:
        scale = args.scale[0] if len(args.scale) == 1 else args.scale
    app.extract(args.frames, args.output, fps=args.fps, threshold=args.threshold,
                sample_rate=args.sample_rate, luminance=args.luminance, scale=scale, offset=args.offset)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logger = get_logger('Main')
    try:
        config = ConfigManager(args.config)
        configure_logging(args.log_dir or config.get('general.log_dir'),
                          args.log_level or config.get('general.log_level') or 'INFO')
        logger.debug(f"子命令 {args.command}")
        app = AppController(config, workers=args.workers)
        return args.handler(app, args)
    except LeechExplorerError as e:
        logger.debug(f"{type(e).__name__}: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        logger.info("收到退出信号")
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"运行出错: {e}", exc_info=True)
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_ERROR

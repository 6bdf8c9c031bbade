"""
异常定义
库代码只抛出这些异常，命令行入口负责把它们转换成退出码和诊断信息
"""


class LeechExplorerError(Exception):
    """所有领域异常的基类"""


class FormatError(LeechExplorerError):
    """输入文本格式错误（平面图、参数文件、轨迹 CSV）"""


class ValidationError(LeechExplorerError):
    """格式正确但违反不变量"""


class ArgumentError(LeechExplorerError, ValueError):
    """调用参数不满足前置条件"""


class DegenerateGeometryError(LeechExplorerError):
    """几何退化，例如平面图中没有任何拐角"""


class ConvergenceError(LeechExplorerError):
    """迭代求解在上限内未收敛"""


class ExtractionError(LeechExplorerError):
    """无法从帧序列中提取位置"""

"""
Leech Explorer
水蛭在建筑平面图模板中探索行为的个体模拟、统计分析与轨迹提取。
"""

__version__ = "0.1.0"

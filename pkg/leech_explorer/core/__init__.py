"""核心逻辑模块"""

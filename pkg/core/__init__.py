"""
비딩 판 진동 최적화 핵심 모듈
"""

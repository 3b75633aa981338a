"""
입출력, 데이터셋, 파이프라인 유틸리티
"""

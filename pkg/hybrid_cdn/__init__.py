"""hybrid-cdn-sim：WWW / P2P / Hybrid 内容分发模型的离散事件网络模拟器"""

__version__ = "0.1.0"

"""模拟器统一异常"""


class SimulationError(Exception):
    """所有模拟相关错误的基类"""


class TopologyError(SimulationError):
    pass


class TopologySyntaxError(TopologyError):
    def __init__(self, line: int, message: str):
        super().__init__(f"第 {line} 行: {message}")
        self.line = line


class TopologySemanticError(TopologyError):
    pass


class RoutingError(SimulationError):
    pass


class ScheduleError(SimulationError):
    pass


class FlowFailure(SimulationError):
    def __init__(self, flow_id: int, seq: int, retries: int):
        super().__init__(f"flow {flow_id}: 分段 {seq} 连续超时 {retries} 次")
        self.flow_id = flow_id
        self.seq = seq
        self.retries = retries


class ChunkError(SimulationError):
    pass


class MissingPieceError(ChunkError):
    def __init__(self, index: int):
        super().__init__(f"缺少分块 {index}")
        self.index = index


class DigestMismatchError(ChunkError):
    def __init__(self, index: int):
        super().__init__(f"分块 {index} 校验失败")
        self.index = index


class TrackerError(SimulationError):
    pass


class ConfigError(SimulationError):
    pass


class ExperimentError(SimulationError):
    pass

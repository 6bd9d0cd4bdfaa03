from pydantic import BaseModel, Field
from typing import Any, Dict, List

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class CheckResultModel(BaseModel):
    """单项检查的结果"""
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    wall_time_s: float = 0.0

    @classmethod
    def from_check_result(cls, result) -> "CheckResultModel":
        return cls(
            name=result.name,
            passed=result.passed,
            value=result.value,
            threshold=result.threshold,
            detail=result.detail,
            wall_time_s=result.wall_time_s,
        )


class RunReport(BaseModel):
    """一次命令执行的报告，以 JSON 输出"""
    command: str = Field(..., description="子命令名称")
    config_digest: str = Field("", description="规范化配置 JSON 的 SHA256")
    metrics: Dict[str, float] = Field(default_factory=dict, description="指标名 → 数值")
    checks: List[CheckResultModel] = Field(default_factory=list, description="逐项检查结果")
    details: Dict[str, Any] = Field(default_factory=dict, description="命令相关的结构化输出")
    wall_time_s: float = 0.0
    exit_code: int = EXIT_OK

    @property
    def failed_checks(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]


class ErrorReport(BaseModel):
    """用法或配置错误时输出的报告"""
    command: str
    error: str
    field: str = ""
    exit_code: int = EXIT_USAGE

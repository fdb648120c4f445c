"""Shared tool invocation/result schema used by every tool and the agent loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class ToolName(Enum):
    CLASSIFICATION = "classification"
    MEASUREMENT = "measurement"
    EXPLANATION = "explanation"


@dataclass(frozen=True)
class ToolCall:
    tool: ToolName
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tool": self.tool.value, "arguments": dict(self.arguments)}


@dataclass(frozen=True)
class ToolOutput:
    """Typed tool result.  Invalid outputs carry a reason and an empty body."""

    tool: ToolName
    status: str  # "valid" | "invalid"
    body: Optional[dict] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.status not in ("valid", "invalid"):
            raise ValueError(f"status must be 'valid' or 'invalid', got {self.status!r}")
        if self.status == "invalid" and self.body:
            raise ValueError("invalid tool output must not carry a body")
        if self.status == "valid" and self.body is None:
            raise ValueError("valid tool output requires a body")

    @property
    def is_valid(self) -> bool:
        return self.status == "valid"

    @classmethod
    def valid(cls, tool: ToolName, body: dict) -> "ToolOutput":
        return cls(tool=tool, status="valid", body=body)

    @classmethod
    def invalid(cls, tool: ToolName, reason: str) -> "ToolOutput":
        return cls(tool=tool, status="invalid", reason=reason)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"tool": self.tool.value, "status": self.status}
        if self.status == "valid":
            out["body"] = self.body
        else:
            out["reason"] = self.reason
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ToolOutput":
        return cls(
            tool=ToolName(data["tool"]),
            status=data["status"],
            body=data.get("body"),
            reason=data.get("reason"),
        )

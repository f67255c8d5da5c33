import contextvars
import logging
from pathlib import Path
from typing import Callable, List, Optional, Union

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel
else:
    from pydantic.v1 import BaseModel

from .common import LogColors, print_log


class IterationRecord(BaseModel):
    start: int = 0
    iteration: int
    loglik: float
    grad_max: Optional[float] = None
    underflow: int = 0

    def to_line(self)->str:
        grad = "nan" if self.grad_max is None else f"{self.grad_max:.6e}"
        return f"start={self.start} iter={self.iteration} ll={self.loglik:.10f} grad_max={grad} underflow={self.underflow}"


class TraceContext():
    """Collects optimizer iterations and underflow flags raised inside its `with` block.

    Usage:
        with TraceContext(path=out_dir/"trace.log"):
            result = estimate(dataset, spec, options)
    """

    context_var = contextvars.ContextVar('trace_context')

    def __init__(self, path: Union[str, Path] = None, callback: Callable[[IterationRecord], None] = None, echo: bool = False) -> None:
        self.path = Path(path) if path else None
        self.callback = callback
        self.echo = echo
        self.records: List[IterationRecord] = []
        self.underflow_events = 0
        self.start = 0
        self._token = None
        self._handle = None

    def __enter__(self):
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self.path, "a", encoding="utf-8")
        self._token = self.__class__.context_var.set(self)
        return self

    @classmethod
    def get_context(cls) -> Optional['TraceContext']:
        return cls.context_var.get(None)

    def begin_start(self, start:int):
        self.start = start
        self.write_line(f"# start {start}")

    def on_iteration(self, iteration:int, loglik:float, grad_max:float=None, underflow:int=0):
        record = IterationRecord(start=self.start, iteration=iteration, loglik=loglik, grad_max=grad_max, underflow=underflow)
        self.records.append(record)
        self.write_line(record.to_line())
        if self.callback:
            self.callback(record)
        if self.echo:
            print_log(record.to_line(), logging.DEBUG, LogColors.DARK_GRAY)

    def on_underflow(self, count:int=1):
        self.underflow_events += count

    def write_line(self, line:str):
        if self._handle:
            self._handle.write(line + "\n")

    def __exit__(self, exc_type, exc_value, traceback):
        if self._handle:
            self._handle.close()
            self._handle = None
        if self._token is not None:
            self.context_var.reset(self._token)
            self._token = None


def report_underflow(count:int=1):
    """Forwards underflow flags to the active TraceContext (no-op outside one)."""
    if count <= 0:
        return
    context = TraceContext.get_context()
    if context:
        context.on_underflow(count)

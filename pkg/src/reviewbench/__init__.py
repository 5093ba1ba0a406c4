"""Evaluation harness for LLM-assisted code review.

Pipelines a snippet corpus through four review experiments: security
vulnerability flagging, functional validation against task descriptions,
approve/reject recommendations (zero-shot and chain-of-thought), and
free-text vulnerability descriptions scored against the CWE catalog.
"""

__version__ = "0.1.0"

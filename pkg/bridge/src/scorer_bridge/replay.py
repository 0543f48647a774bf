"""Replay store: canned protocol responses from a fixture file.

Fixture JSONL, one exchange per line:
    {"request": {"path": "/score", "body": {...}}, "response": {...}}

Responses are cached as serialized JSON text at load time and served
verbatim, so identical requests always get identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path


class ReplayError(ValueError):
    pass


def canonical_key(path: str, body: dict) -> str:
    return path + "\x1f" + json.dumps(body, sort_keys=True,
                                      separators=(",", ":"), ensure_ascii=False)


class ReplayStore:
    def __init__(self, responses: dict[str, str]):
        self._responses = responses

    def __len__(self) -> int:
        return len(self._responses)

    @classmethod
    def load(cls, path: str | Path) -> "ReplayStore":
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    request = rec["request"]
                    key = canonical_key(str(request["path"]), request["body"])
                    responses[key] = json.dumps(rec["response"],
                                                ensure_ascii=False)
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ReplayError(f"{path}:{lineno}: malformed fixture: {exc}") from exc
        return cls(responses)

    def lookup(self, path: str, body: dict) -> str | None:
        return self._responses.get(canonical_key(path, body))

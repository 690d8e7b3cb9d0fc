"""Schema-valid trace emission.

The engine's traces.jsonl schema: one JSON object per line with
``image_id``, ``caption_id``, ``tokens`` (m nonempty lowercase tokens),
``p_ref`` and ``argmax`` (m+1 entries each; the last one is the end-token
prediction). Probabilities are written with 17 significant digits so they
reload bit for bit.
"""

from __future__ import annotations

import json
import re
from typing import IO, Sequence

_TOKEN_PATTERN = re.compile(r"[a-z0-9']+\Z")


class TraceWriter:
    """Appends trace records to a JSONL file, enforcing the schema.

    One writer per output file; concurrent appends to the same file are not
    supported. Usable as a context manager.
    """

    def __init__(self, path: str) -> None:
        self._handle: IO[str] | None = open(path, "w", encoding="utf-8")
        self._seen: set[tuple[str, str]] = set()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def append(
        self,
        image_id: str,
        caption_id: str,
        tokens: Sequence[str],
        probabilities: Sequence[float],
        argmax_flags: Sequence[bool],
    ) -> None:
        """Write one record; raises ValueError on any schema violation."""
        if self._handle is None:
            raise ValueError("writer is closed")
        if len(tokens) < 1:
            raise ValueError(f"caption {caption_id!r}: needs at least one token")
        if len(probabilities) != len(tokens) + 1 or len(argmax_flags) != len(tokens) + 1:
            raise ValueError(
                f"caption {caption_id!r}: length mismatch: {len(tokens)} tokens need "
                f"{len(tokens) + 1} probabilities and argmax flags, got "
                f"{len(probabilities)} and {len(argmax_flags)}"
            )
        for token in tokens:
            if not _TOKEN_PATTERN.match(token):
                raise ValueError(f"caption {caption_id!r}: invalid token {token!r}")
        for p in probabilities:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"caption {caption_id!r}: probability {p!r} outside [0, 1]")
        key = (image_id, caption_id)
        if key in self._seen:
            raise ValueError(f"duplicate caption {caption_id!r} for image {image_id!r}")
        self._seen.add(key)

        p_ref = "[" + ", ".join(format(float(p), ".17g") for p in probabilities) + "]"
        argmax = "[" + ", ".join("true" if flag else "false" for flag in argmax_flags) + "]"
        self._handle.write(
            f'{{"image_id": {json.dumps(image_id)}, '
            f'"caption_id": {json.dumps(caption_id)}, '
            f'"tokens": {json.dumps(list(tokens))}, '
            f'"p_ref": {p_ref}, "argmax": {argmax}}}\n'
        )


def from_softmax_rows(
    tokens: Sequence[str],
    vocab_rows: Sequence[Sequence[float]],
    token_ids: Sequence[int],
) -> tuple[list[float], list[bool]]:
    """Reduce full vocabulary probability rows to (p_ref, argmax) pairs.

    ``vocab_rows`` holds one distribution per position (m+1 including the
    end token); ``token_ids`` gives the correct token's index in each row.
    The argmax flag is true when the correct token's probability equals the
    row maximum, so ties resolve in favor of the correct token.
    """
    if len(vocab_rows) != len(tokens) + 1 or len(token_ids) != len(tokens) + 1:
        raise ValueError(
            f"length mismatch: {len(tokens)} tokens need {len(tokens) + 1} rows "
            f"and token ids, got {len(vocab_rows)} and {len(token_ids)}"
        )
    probabilities: list[float] = []
    flags: list[bool] = []
    for position, (row, token_id) in enumerate(zip(vocab_rows, token_ids)):
        if not 0 <= token_id < len(row):
            raise ValueError(
                f"position {position}: token id {token_id} out of range for row of {len(row)}"
            )
        total = sum(row)
        if abs(total - 1.0) > 1e-4:
            raise ValueError(f"position {position}: row sums to {total!r}, not 1")
        p_ref = float(row[token_id])
        probabilities.append(p_ref)
        flags.append(p_ref == max(row))
    return probabilities, flags

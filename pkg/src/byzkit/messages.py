"""Message tags, payload layouts and bit sizing.

A message costs an 8-bit tag plus its payload. Each payload field has a
kind: an ID costs ceil(k * log2 n) bits, a flag costs 1 bit and a small
integer (phase number, bin, committee coordinate) costs ceil(log2 n) + 1
bits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .params import id_bits, log2n

TAG_BITS = 8
# CONGEST discipline: every message must fit in C_MSG * log2 n bits.
C_MSG = 16


class Tag(enum.IntEnum):
    ACTIVE_ANNOUNCE = 0
    SAMPLE_ID = 1
    QUERY = 2
    QUERY_REPLY = 3
    CORE_BA = 4
    DECISION_BROADCAST = 5
    PROMISE_REQUEST = 6
    PROMISE_REPLY = 7
    FULL_GRAPH_HELLO = 8


class Field(enum.Enum):
    ID = "id"
    FLAG = "flag"
    INT = "int"


def field_bits(kind: Field, n: int, k: int) -> int:
    if kind is Field.ID:
        return id_bits(n, k)
    if kind is Field.FLAG:
        return 1
    return math.ceil(log2n(n)) + 1


# Default payload layouts. CoreBa and DecisionBroadcast have alternative
# layouts used by the election variants (values that are IDs).
LAYOUTS: dict[Tag, tuple[Field, ...]] = {
    Tag.ACTIVE_ANNOUNCE: (Field.ID,),
    Tag.SAMPLE_ID: (Field.ID,),
    Tag.QUERY: (Field.ID,),
    Tag.QUERY_REPLY: (Field.ID,),
    Tag.CORE_BA: (Field.ID, Field.INT, Field.INT),
    Tag.DECISION_BROADCAST: (Field.FLAG, Field.FLAG),
    Tag.PROMISE_REQUEST: (),
    Tag.PROMISE_REPLY: (Field.FLAG, Field.FLAG),
    Tag.FULL_GRAPH_HELLO: (Field.ID,),
}

ID_VALUE_DECISION = (Field.FLAG, Field.ID)


def layout_bits(layout: tuple[Field, ...], n: int, k: int) -> int:
    return TAG_BITS + sum(field_bits(f, n, k) for f in layout)


class CongestViolation(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    """One protocol message. ``layout`` defaults to the tag's standard layout."""

    tag: Tag
    payload: tuple[int, ...] = ()
    layout: tuple[Field, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.payload) != len(self.fields):
            raise ValueError(
                f"{self.tag.name} expects {len(self.fields)} payload fields, got {len(self.payload)}"
            )

    @property
    def fields(self) -> tuple[Field, ...]:
        return LAYOUTS[self.tag] if self.layout is None else self.layout

    def bit_size(self, n: int, k: int) -> int:
        return layout_bits(self.fields, n, k)

    def encode(self, n: int, k: int) -> str:
        """Serialize to a bit string; its length always equals bit_size."""
        parts = [format(int(self.tag), f"0{TAG_BITS}b")]
        for kind, value in zip(self.fields, self.payload):
            width = field_bits(kind, n, k)
            if kind is Field.ID:
                value -= 1  # IDs live in [1, n^k]
            if not 0 <= value < 2**width:
                raise ValueError(f"value {value} does not fit a {kind.value} field")
            parts.append(format(value, f"0{width}b"))
        return "".join(parts)


def check_congest(bits: int, n: int) -> None:
    limit = C_MSG * log2n(n)
    if bits > limit:
        raise CongestViolation(f"message of {bits} bits exceeds {limit:.1f}")

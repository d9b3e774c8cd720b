"""Token-id layout shared by the model, task generators, and checkpoints.

Fixed special tokens occupy ids 0..3 (pad, bos, eos, unk); language-id
tokens and per-language content inventories are appended after them.
Extension (new languages) only ever appends ids, so existing token ids
stay valid across vocabulary growth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
NUM_SPECIALS = 4


@dataclass
class Vocabulary:
    lang_ids: dict[str, int] = field(default_factory=dict)
    inventories: dict[str, tuple[int, int]] = field(default_factory=dict)  # name -> (start, size)
    size: int = NUM_SPECIALS

    def add_language(self, name: str, inventory_size: int) -> None:
        """Append a language-id token plus a contiguous content inventory."""
        if name in self.lang_ids:
            raise ValueError(f"language already present: {name}")
        self.lang_ids[name] = self.size
        self.size += 1
        self.inventories[name] = (self.size, inventory_size)
        self.size += inventory_size

    def lang_token(self, name: str) -> int:
        return self.lang_ids[name]

    def inventory_range(self, name: str) -> range:
        start, size = self.inventories[name]
        return range(start, start + size)

    def to_table(self) -> dict:
        return {
            "specials": {"pad": PAD, "bos": BOS, "eos": EOS, "unk": UNK},
            "lang_ids": dict(sorted(self.lang_ids.items())),
            "inventories": {k: list(v) for k, v in sorted(self.inventories.items())},
            "size": self.size,
        }

    @classmethod
    def from_table(cls, table: dict) -> "Vocabulary":
        v = cls()
        v.lang_ids = {k: int(t) for k, t in table["lang_ids"].items()}
        v.inventories = {k: (int(a), int(b)) for k, (a, b) in table["inventories"].items()}
        v.size = int(table["size"])
        return v

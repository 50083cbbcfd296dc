"""Security gate: maximum ciphertext-modulus size per ring dimension.

The shipped tables are the published homomorphic-encryption community
standard (classical security, ternary secret, error std 3.2).  They are
authoritative here: there is no live attack-cost estimation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

# max log2(q) per n, classical cost model, ternary secret.
STANDARD_TABLES = {
    128: {1024: 27, 2048: 54, 4096: 109, 8192: 218, 16384: 438},
    192: {1024: 19, 2048: 37, 4096: 75, 8192: 152, 16384: 305},
    256: {1024: 14, 2048: 29, 4096: 58, 8192: 118, 16384: 237},
}


class SecurityTableError(KeyError):
    pass


@dataclass(frozen=True)
class SecurityTable:
    rows: dict
    security_bits: int
    secret_dist: str = "ternary"

    def __post_init__(self):
        prev = None
        for n in sorted(self.rows):
            if prev is not None and self.rows[n] <= prev:
                raise ValueError("max_log2_q must be strictly increasing in n")
            prev = self.rows[n]

    def max_log2_q(self, n: int) -> int:
        try:
            return self.rows[n]
        except KeyError:
            raise SecurityTableError(
                f"n={n} not present in the {self.security_bits}-bit security table") from None

    def to_json(self) -> str:
        return json.dumps({
            "security_bits": self.security_bits,
            "secret_dist": self.secret_dist,
            "rows": [{"n": n, "max_log2_q": v} for n, v in sorted(self.rows.items())],
        }, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SecurityTable":
        doc = json.loads(text)
        return cls(rows={int(r["n"]): int(r["max_log2_q"]) for r in doc["rows"]},
                   security_bits=int(doc["security_bits"]),
                   secret_dist=doc.get("secret_dist", "ternary"))


def default_table(security_bits: int = 128) -> SecurityTable:
    if security_bits not in STANDARD_TABLES:
        raise ValueError(f"no shipped table for lambda={security_bits}")
    return SecurityTable(rows=dict(STANDARD_TABLES[security_bits]),
                         security_bits=security_bits)


def security_gate(n: int, log2_q: int, table: SecurityTable) -> bool:
    """Pass iff a log2_q-bit modulus at dimension n meets the table's
    security level."""
    return log2_q <= table.max_log2_q(n)

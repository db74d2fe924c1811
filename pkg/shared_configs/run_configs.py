import hashlib
import json
from dataclasses import dataclass, replace
from typing import Literal, Optional

"""
Two result files are comparable only if they were produced under the same
RunConfig. Its hash is written into every output header, next to the
phi-cache fingerprint.
"""

MAX_GEN_LIMIT = 24


@dataclass
class RunConfig:
    # Numerics
    quad_rel_tol: float = 1e-12
    rel_gap: float = 1e-8
    max_gen: int = 18  # deepest generation an enclosure may visit

    # Randomness and I/O
    seed: int = 0
    cache_path: Optional[str] = None
    format: Literal["csv", "jsonl"] = "csv"
    threads: int = 1
    out: str = "results"

    def hash(self) -> str:
        json_string = json.dumps(self.__dict__, sort_keys=True)
        hash_object = hashlib.sha256(json_string.encode())
        hash_hex = hash_object.hexdigest()
        return f"h{hash_hex[:16]}"

    def to_json(self) -> dict:
        return dict(sorted(self.__dict__.items()))


default_run_config = RunConfig()

# Used by projects/acceptance/bulk_checks.py
acceptance_run_config = replace(
    default_run_config,
    threads=4,
    out="results/acceptance",
)

import csv
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy
from pydantic import BaseModel, Field, field_validator

from .config import __version__

logger = logging.getLogger(__name__)

METADATA_FILE = "metadata.json"
RUN_LOG_FILE = "run.log"


def format_value(value: Any) -> str:
    """Full round-trip text for floats; plain str for everything else."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


class ExperimentOutput(BaseModel):
    """Artifact directory of one experiment run: CSV tables, JSON documents, array dumps and metadata."""

    out_dir: Path
    experiment: str
    config_echo: Dict[str, Any] = Field(default_factory=dict)
    seeds: List[int] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(
        default_factory=lambda: {
            "version": __version__,
            "date": datetime.now().isoformat(),
            "creator": "kgcouple",
        }
    )

    @field_validator("out_dir", mode="before")
    @classmethod
    def validate_out_dir(cls, v):
        if v is None or str(v) == "":
            raise ValueError("out_dir must be a non-empty path")
        return Path(v)

    def prepare(self) -> None:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Could not create output directory {self.out_dir}: {e}", exc_info=True)
            raise ValueError(f"Could not create output directory {self.out_dir}: {e}") from e

    def path_for(self, name: str) -> Path:
        """Resolve an artifact name, refusing anything that lands outside out_dir."""
        base = self.out_dir.resolve()
        target = (base / name).resolve()
        if target != base and base not in target.parents:
            logger.error(f"Artifact '{name}' resolves outside {base}")
            raise ValueError(f"Artifact path '{name}' is outside the output directory {base}")
        return target

    def _record(self, name: str) -> None:
        if name not in self.artifacts:
            self.artifacts.append(name)

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        path = self.path_for(name)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{name}: row has {len(row)} values but header has {len(header)}")
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([format_value(v) for v in row] for row in rows)
        self._record(name)
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path_for(name)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self._record(name)
        logger.info(f"Wrote {path}")
        return path

    def write_arrays(self, name: str, arrays: Dict[str, np.ndarray], descriptor: Optional[dict] = None) -> Path:
        """Binary `.npz` dump plus a JSON descriptor next to it (`<name>.json`)."""
        path = self.path_for(f"{name}.npz")
        np.savez(path, **arrays)
        self._record(f"{name}.npz")
        described = {"arrays": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()}}
        described.update(descriptor or {})
        self.write_json(f"{name}.json", described)
        return path

    def write_metadata(self, extra: Optional[Dict[str, Any]] = None) -> Path:
        payload = dict(self.metadata)
        payload.update(
            {
                "experiment": self.experiment,
                "config": self.config_echo,
                "seeds": self.seeds,
                "numpy_version": np.__version__,
                "scipy_version": scipy.__version__,
                "artifacts": sorted(self.artifacts + [METADATA_FILE]),
            }
        )
        payload.update(extra or {})
        return self.write_json(METADATA_FILE, payload)

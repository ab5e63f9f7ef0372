import logging
import os
from dataclasses import fields
from typing import Any, Dict, Optional, Type

import numpy as np
import yaml
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_OUTPUT_DIR = 'runs'
OUTPUT_ENV_VAR = 'INGNN_OUT'
PRESETS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')

# Named random streams; each is an independent Philox key derived from one seed
STREAMS = {
    'init': 0,
    'dropout': 1,
    'split': 2,
    'graph': 3,
    'features': 4,
    'labels': 5,
    'monte_carlo': 6,
}



def derive_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """
    Counter-based generator for (seed, stream, index). The same triple always
    yields the same stream, independent of how many other streams were drawn.
    """
    if stream not in STREAMS:
        raise ValueError(f"Unknown random stream '{stream}'. Expected one of {sorted(STREAMS)}")
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(STREAMS[stream], int(index)))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, index: int) -> int:
    """Child 64-bit seed for the index-th repeat of a run."""
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(0xFFFF, int(index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a flat `key: value` YAML mapping."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, 'r') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a flat key: value mapping")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"Config file {path} must be flat; nested keys: {nested}")
    return data


def load_preset(name: str) -> Dict[str, Any]:
    path = os.path.join(PRESETS_DIR, f"{name}.yaml")
    if not os.path.exists(path):
        available = sorted(os.path.splitext(f)[0] for f in os.listdir(PRESETS_DIR) if f.endswith('.yaml'))
        raise FileNotFoundError(f"Unknown preset '{name}'. Available presets: {available}")
    return load_config_file(path)


def split_config(values: Dict[str, Any], *targets: Type) -> Dict[Type, Dict[str, Any]]:
    """
    Route flat keys to the dataclass that declares them. Unknown keys are an
    error so typos in config files do not silently fall back to defaults.
    """
    routed = {t: {} for t in targets}
    unknown = []
    for key, value in values.items():
        for t in targets:
            if key in {f.name for f in fields(t)}:
                routed[t][key] = value
                break
        else:
            unknown.append(key)
    if unknown:
        raise ValueError(f"Unknown config key(s): {unknown}")
    return routed


def resolve_output_dir(cli_value: Optional[str] = None) -> str:
    """
    Output directory precedence: INGNN_OUT (environment or .env) wins, then the
    --out flag, then DEFAULT_OUTPUT_DIR.
    """
    load_dotenv()
    env_value = os.environ.get(OUTPUT_ENV_VAR)
    out = env_value or cli_value or DEFAULT_OUTPUT_DIR
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"Output directory {out} is not writable")
    return out

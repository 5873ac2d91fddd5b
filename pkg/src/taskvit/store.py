"""Named parameter registry and the on-disk checkpoint format.

A checkpoint is a directory of tensor files plus ``manifest.json`` mapping
parameter names to files, echoing the producing config, and recording the
step counter. The manifest is written last, so a directory without a valid
manifest is simply not a checkpoint; loading validates everything before
touching the caller's state.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigError, DataError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered name -> Tensor collection of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = requires_grad
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def subset(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n.startswith(prefix)]

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Copies of current parameter values, for bitwise comparisons."""
        return {n: t.data.copy() for n, t in self._params.items() if n.startswith(prefix)}

    def freeze(self, prefix: str = "") -> None:
        for _, t in self.subset(prefix):
            t.requires_grad = False


def _tensor_filename(index: int) -> str:
    return f"tensors/{index:05d}.otmt"


def save_checkpoint(
    path: str | Path,
    store: ParamStore,
    config_echo: dict,
    step: int,
    optim_state: dict | None = None,
) -> None:
    """Write parameters (and optional optimizer moments) under ``path``.

    ``optim_state`` maps parameter name -> {"m": array, "v": array, "t": int}.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = {}
    optim = {}
    index = 0
    for name, tensor in store.items():
        fname = _tensor_filename(index)
        index += 1
        fileio.save_tensor(path / fname, tensor.data)
        params[name] = fname
        if optim_state and name in optim_state:
            st = optim_state[name]
            m_file, v_file = _tensor_filename(index), _tensor_filename(index + 1)
            index += 2
            fileio.save_tensor(path / m_file, st["m"])
            fileio.save_tensor(path / v_file, st["v"])
            optim[name] = {"m": m_file, "v": v_file, "t": int(st["t"])}
    manifest = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "config": config_echo,
        "params": params,
    }
    if optim:
        manifest["optim"] = optim
    fileio.write_json(path / "manifest.json", manifest)


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{path} has no manifest.json; not a checkpoint")
    manifest = fileio.read_json(manifest_path)
    if not isinstance(manifest, dict) or "params" not in manifest:
        raise DataError(f"{manifest_path}: manifest lacks a 'params' table")
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"{manifest_path}: checkpoint version {version!r}, "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    return manifest


def load_checkpoint(path: str | Path):
    """Read a checkpoint directory.

    Returns ``(store, config_echo, step, optim_state)``. All tensor files are
    read and validated before the store is assembled, so a corrupt checkpoint
    never yields a partial load.
    """
    path = Path(path)
    manifest = read_manifest(path)
    loaded: dict[str, np.ndarray] = {}
    for name, fname in manifest["params"].items():
        loaded[name] = fileio.load_tensor(path / fname)
    optim_state: dict[str, dict] = {}
    for name, entry in manifest.get("optim", {}).items():
        if name not in loaded:
            raise DataError(f"{path}: optimizer state for unknown parameter {name!r}")
        optim_state[name] = {
            "m": fileio.load_tensor(path / entry["m"]),
            "v": fileio.load_tensor(path / entry["v"]),
            "t": int(entry["t"]),
        }
    store = ParamStore()
    for name, array in loaded.items():
        store.add(name, array)
    return store, manifest.get("config", {}), int(manifest.get("step", 0)), optim_state


def load_into(store: ParamStore, source: ParamStore, prefix: str = "") -> int:
    """Copy values for matching names from ``source``; returns the count."""
    count = 0
    for name, tensor in source.items():
        if not name.startswith(prefix):
            continue
        if name in store:
            target = store[name]
            if target.data.shape != tensor.data.shape:
                raise ConfigError(
                    f"parameter {name!r}: checkpoint shape {tensor.data.shape} "
                    f"does not match model shape {target.data.shape}"
                )
            target.data = tensor.data.copy()
            count += 1
    return count

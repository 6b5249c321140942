"""Run-configuration ingestion: one JSON document (with optional file
references for the model/hardware/profile sections) is validated, unit
converted, and default filled into the objects the commands consume."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .arch import ModelArchitecture
from .basecost import Dtypes
from .errors import ConfigError, InputError, ShapeError
from .fault import CheckpointPolicy, FaultModel, steps_from_tokens
from .optim import OptimizationSet
from .plan import ParallelPlan
from .profile import HardwareSpec, ProfileDB
from .tuner import SearchSpace

SCHEMA_VERSION = 1

OUTPUT_FORMATS = ("json", "csv", "markdown")


@dataclass(frozen=True)
class FaultSection:
    model: FaultModel
    save_s: float = 0.0
    interval_steps: int | None = None
    total_steps: int | None = None
    tokens: float | None = None

    def resolve_steps(self, global_batch: int, seq_len: int) -> int:
        if self.total_steps is not None:
            return self.total_steps
        if self.tokens is not None:
            return steps_from_tokens(self.tokens, global_batch, seq_len)
        raise ConfigError("fault config needs either S or tokens")

    def policy(self, step_s: float, global_batch: int, seq_len: int,
               interval: int | None = None) -> CheckpointPolicy:
        chosen = interval if interval is not None else self.interval_steps
        if chosen is None:
            raise ConfigError("fault config has no I_ckpt and none was supplied")
        return CheckpointPolicy(chosen, self.save_s,
                                self.resolve_steps(global_batch, seq_len), step_s)


@dataclass(frozen=True)
class RunConfig:
    arch: ModelArchitecture
    db: ProfileDB
    plan: ParallelPlan | None = None
    space: SearchSpace | None = None
    opt_combos: tuple[OptimizationSet, ...] = (OptimizationSet(),)
    fault: FaultSection | None = None
    dtypes: Dtypes = field(default_factory=Dtypes)
    output_format: str = "json"
    tflops_mode: str = "fwd-bwd-per-device"
    schema_version: int = SCHEMA_VERSION

    def describe(self) -> dict:
        """Fully resolved configuration, defaults included, for echoing."""
        out: dict = {"schema_version": self.schema_version,
                     "output_format": self.output_format,
                     "tflops_mode": self.tflops_mode}
        out["model"] = {
            "L": self.arch.num_layers, "s": self.arch.seq_len,
            "h": self.arch.hidden_size, "a": self.arch.num_heads,
            "V": self.arch.vocab_size, "g_d": self.arch.dense_ffn_size,
            "attention": self.arch.attention_kind,
            "structure": self.arch.structure_kind,
        }
        out["dtypes"] = {"D_para": self.dtypes.param_bytes,
                         "D_grad": self.dtypes.grad_bytes,
                         "D_opt": self.dtypes.opt_bytes,
                         "D_act": self.dtypes.act_bytes}
        if self.plan is not None:
            out["plan"] = self.plan.to_json_dict()
        first = self.opt_combos[0]
        out["optimization"] = {
            "features": first.feature_names(),
            "compute_scaling": dict(first.compute_scaling) or {"*": 1.0},
            "comm_scaling": dict(first.comm_scaling) or {"*": 1.0},
            "overlap_coefficients": {
                name: ({"alpha": ov.alpha, "beta": ov.beta}
                       | ({"splits": ov.splits} if name == "tp" else {}))
                for name, ov in (("tp", first.tp_overlap), ("cp", first.cp_overlap),
                                 ("ep", first.ep_overlap), ("pp", first.pp_overlap))
                if ov is not None
            } or {"default_alpha": 1.0, "default_beta": 1.0},
        }
        if self.fault is not None:
            f = self.fault.model
            out["fault"] = {
                "N_nodes": f.nodes,
                "r_f_per_node_day": f.failures_per_node_day,
                "r_f_per_node_second": f.failures_per_node_day / 86400.0,
                "u0": f.init_s,
                "mix": list(f.mix),
                "T_save": self.fault.save_s,
            }
        return out


def _load_section(value, base_dir: str) -> dict:
    """A section is either an inline object or a path to a JSON file."""
    if isinstance(value, dict):
        return value
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(base_dir, value)
        try:
            with open(path) as fh:
                return json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"referenced file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"parse error in {path}: {exc}") from exc
    raise ConfigError(f"section must be an object or a file path, got {type(value).__name__}")


def _parse_fault(section: dict) -> FaultSection:
    try:
        model = FaultModel.from_json_dict(section)
    except (InputError, KeyError) as exc:
        raise ConfigError(f"fault config invalid: {exc}") from exc
    interval = section.get("I_ckpt")
    return FaultSection(
        model=model,
        save_s=float(section.get("T_save", 0.0)),
        interval_steps=int(interval) if interval is not None else None,
        total_steps=int(section["S"]) if "S" in section else None,
        tokens=float(section["tokens"]) if "tokens" in section else None,
    )


def _parse_space(section: dict, arch: ModelArchitecture, db: ProfileDB,
                 combos: tuple[OptimizationSet, ...], dtypes: Dtypes,
                 tflops_mode: str) -> SearchSpace:
    def cand(key):
        return tuple(int(x) for x in section.get(key, ()))
    try:
        return SearchSpace(
            arch=arch, db=db,
            total_gpus=int(section["g_n"]),
            global_batch=int(section["g_bs"]),
            tp_candidates=cand("t"),
            cp_candidates=cand("c") or (1,),
            pp_candidates=cand("p"),
            ep_candidates=cand("e"),
            dp_candidates=cand("d"),
            micro_batch_candidates=cand("m_bs"),
            chunk_candidates=cand("v"),
            opt_combos=combos, dtypes=dtypes, tflops_mode=tflops_mode,
        )
    except KeyError as exc:
        raise ConfigError(f"search space missing field {exc}") from exc


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error in {path}: line {exc.lineno}: {exc.msg}") from exc


def load_config(path: str) -> RunConfig:
    """Load and validate a run configuration; every referenced file must
    exist and parse, and cross-references (plan vs model) must resolve."""
    return _build_config(_read_json(path), os.path.dirname(os.path.abspath(path)))


def load_config_with_space(path: str, space_path: str) -> RunConfig:
    """Same as load_config but with the search space taken from a separate
    file (resolved relative to the working directory)."""
    raw = _read_json(path)
    raw["space"] = os.path.abspath(space_path)
    return _build_config(raw, os.path.dirname(os.path.abspath(path)))


def _build_config(raw: dict, base_dir: str) -> RunConfig:
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")

    try:
        arch = ModelArchitecture.from_json_dict(_load_section(raw["model"], base_dir))
    except KeyError as exc:
        raise ConfigError(f"config missing section {exc}") from exc
    except (InputError, TypeError) as exc:
        raise ConfigError(f"model section invalid: {exc}") from exc

    try:
        hardware = HardwareSpec.from_json_dict(_load_section(raw["hardware"], base_dir))
        db = ProfileDB.from_json_dict(_load_section(raw["profile"], base_dir), hardware)
    except KeyError as exc:
        raise ConfigError(f"config missing section {exc}") from exc
    except InputError as exc:
        raise ConfigError(f"profile section invalid: {exc}") from exc

    dtypes = Dtypes.from_json_dict(raw.get("dtypes", {}))
    tflops_mode = raw.get("tflops_mode", "fwd-bwd-per-device")

    opt_raw = raw.get("optimization")
    if opt_raw is None:
        combos = (OptimizationSet(),)
        declared_combos = ()   # a space without a declared allowlist gets
        # the default one (all features) when it resolves
    elif isinstance(opt_raw, list):
        combos = tuple(OptimizationSet.from_json_dict(o) for o in opt_raw)
        declared_combos = combos
    else:
        combos = (OptimizationSet.from_json_dict(opt_raw),)
        declared_combos = combos

    plan = None
    if "plan" in raw:
        try:
            plan = ParallelPlan.from_json_dict(_load_section(raw["plan"], base_dir),
                                               num_layers=arch.num_layers)
        except (ShapeError, InputError, TypeError) as exc:
            raise ConfigError(f"plan section invalid: {exc}") from exc

    space = None
    if "space" in raw:
        space = _parse_space(_load_section(raw["space"], base_dir), arch, db,
                             declared_combos, dtypes, tflops_mode)

    fault = None
    if "fault" in raw:
        fault = _parse_fault(_load_section(raw["fault"], base_dir))

    output_format = raw.get("output", "json")
    if output_format not in OUTPUT_FORMATS:
        raise ConfigError(f"unknown output format {output_format!r}")

    if plan is None and space is None:
        raise ConfigError("config needs a plan or a space section")

    return RunConfig(arch=arch, db=db, plan=plan, space=space,
                     opt_combos=combos, fault=fault, dtypes=dtypes,
                     output_format=output_format, tflops_mode=tflops_mode,
                     schema_version=version)

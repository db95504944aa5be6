"""Run configuration.

Configuration is a plain INI file (``configparser``). Every key is optional;
missing keys fall back to the defaults below. Recognised sections::

    [ingest]
    delimiter = ,
    list_delimiter = |
    code_precision = 3
    dosage_units = MG,MCG,G,ML,L,%,UNITS,UNIT,MEQ,MMOL,...
    dosage_forms = TABLET,CAPSULE,...
    # column mapping: canonical_name = header in the source file
    admin.admit_id = ADMIT_ID
    lab.value = RESULT

    [labeling]
    scr_test = CREATININE
    aki_codes = 584.5,584.6,584.7,584.8,584.9
    esrd_codes = 585.9
    transplant_prefixes = 55.6
    min_age = 18

    [featurize]
    mode = all
    min_support = 100

The config path is taken from ``--config`` or the ``AKIRISK_CONFIG``
environment variable.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_ENV = "AKIRISK_CONFIG"

DEFAULT_DOSAGE_UNITS = (
    "MG", "MCG", "G", "GM", "GRAM", "KG", "ML", "L", "%", "UNIT", "UNITS",
    "MEQ", "MMOL", "MG/ML", "MCG/ML", "MG/HR", "MCG/HR", "UNITS/ML", "MEQ/L",
    "MG/5ML", "MCG/ACT", "IU",
)
DEFAULT_DOSAGE_FORMS = (
    "TABLET", "TABLETS", "TAB", "TABS", "CAPSULE", "CAPSULES", "CAP", "CAPS",
    "SOLUTION", "SOLN", "INJECTION", "INJ", "SUSPENSION", "SUSP", "SYRUP",
    "PATCH", "CREAM", "OINTMENT", "POWDER", "PACKET", "VIAL", "BAG", "PREMIX",
    "EC", "ER", "SR", "XL", "DR", "ODT", "IVPB", "PO", "IV", "NEB", "SPRAY",
)


class ConfigError(ValueError):
    """Fatal configuration problem (bad key, missing column, bad value)."""


def _csv(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class IngestConfig:
    delimiter: str = ","
    list_delimiter: str = "|"
    code_precision: int = 3
    dosage_units: tuple[str, ...] = DEFAULT_DOSAGE_UNITS
    dosage_forms: tuple[str, ...] = DEFAULT_DOSAGE_FORMS
    # canonical column -> header, keyed "table.column"
    columns: dict[str, str] = field(default_factory=dict)

    def column(self, table: str, name: str) -> str:
        return self.columns.get(f"{table}.{name}", name)


@dataclass(frozen=True)
class LabelConfig:
    scr_test: str = "CREATININE"
    aki_codes: tuple[str, ...] = ("584.5", "584.6", "584.7", "584.8", "584.9")
    esrd_codes: tuple[str, ...] = ("585.9",)
    transplant_prefixes: tuple[str, ...] = ("55.6",)
    min_age: float = 18.0


@dataclass(frozen=True)
class FeaturizeConfig:
    mode: str = "all"
    min_support: int = 100


@dataclass(frozen=True)
class Config:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    labeling: LabelConfig = field(default_factory=LabelConfig)
    featurize: FeaturizeConfig = field(default_factory=FeaturizeConfig)


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Read a config file; ``None`` consults ``AKIRISK_CONFIG`` then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return Config()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep header case in column mappings
    parser.read(path, encoding="utf-8")

    known = {"ingest", "labeling", "featurize"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    try:
        ingest = IngestConfig()
        if parser.has_section("ingest"):
            sec = parser["ingest"]
            columns = {k: v for k, v in sec.items() if "." in k}
            ingest = IngestConfig(
                delimiter=sec.get("delimiter", ingest.delimiter),
                list_delimiter=sec.get("list_delimiter", ingest.list_delimiter),
                code_precision=sec.getint("code_precision", ingest.code_precision),
                dosage_units=_csv(sec["dosage_units"]) if "dosage_units" in sec else ingest.dosage_units,
                dosage_forms=_csv(sec["dosage_forms"]) if "dosage_forms" in sec else ingest.dosage_forms,
                columns=columns,
            )
        labeling = LabelConfig()
        if parser.has_section("labeling"):
            sec = parser["labeling"]
            labeling = LabelConfig(
                scr_test=sec.get("scr_test", labeling.scr_test),
                aki_codes=_csv(sec["aki_codes"]) if "aki_codes" in sec else labeling.aki_codes,
                esrd_codes=_csv(sec["esrd_codes"]) if "esrd_codes" in sec else labeling.esrd_codes,
                transplant_prefixes=(
                    _csv(sec["transplant_prefixes"]) if "transplant_prefixes" in sec
                    else labeling.transplant_prefixes
                ),
                min_age=sec.getfloat("min_age", labeling.min_age),
            )
        feat = FeaturizeConfig()
        if parser.has_section("featurize"):
            sec = parser["featurize"]
            feat = FeaturizeConfig(
                mode=sec.get("mode", feat.mode),
                min_support=sec.getint("min_support", feat.min_support),
            )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if ingest.code_precision < 1:
        raise ConfigError("code_precision must be >= 1")
    return Config(ingest=ingest, labeling=labeling, featurize=feat)

"""EHR data model, table parsing/joining, and code/medication normalization."""
from __future__ import annotations

import csv
import gzip
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .config import ConfigError, IngestConfig

log = logging.getLogger(__name__)

ABNORMAL_FLAGS = ("high", "low", "abnormal", "none")
CODE_SYSTEMS = ("ICD9_DX", "ICD9_PX", "CPT4", "DRG")

ADMIN_COLUMNS = (
    "admit_id", "patient_id", "admit_time", "discharge_time", "age", "race",
    "gender", "marital_status", "insurances", "locations",
    "discharge_disposition", "length_of_stay", "admit_day", "discharge_day",
    "icd9_dx", "icd9_px", "cpt4", "drg",
)
LAB_COLUMNS = ("admit_id", "test_name", "time", "value", "abnormal_flag")
PHARMACY_COLUMNS = (
    "admit_id", "description", "pharm_class", "pharm_subclass",
    "therapeutic_class", "time",
)
# admin list columns -> coding system
CODE_COLUMNS = {"icd9_dx": "ICD9_DX", "icd9_px": "ICD9_PX", "cpt4": "CPT4", "drg": "DRG"}


class DataError(ValueError):
    """Fatal data problem (duplicate keys, ordering violations)."""


class RecordError(DataError):
    """A single malformed input row."""

    def __init__(self, table: str, line: int, message: str):
        super().__init__(f"{table}:{line}: {message}")
        self.table = table
        self.line = line
        self.message = message


def truncate_code(code: str, precision: int) -> str:
    """Keep the first ``precision`` significant characters of a hierarchical code.

    The decimal point is not counted, so ``truncate_code("585.9", 3) == "585"``
    and ``truncate_code("55.69", 3) == "55.6"``.
    """
    if precision < 1:
        raise ValueError("precision must be >= 1")
    code = code.strip()
    kept = 0
    out = []
    for ch in code:
        if ch == ".":
            out.append(ch)
            continue
        if kept == precision:
            break
        out.append(ch)
        kept += 1
    return "".join(out).rstrip(".")


_NUMBER = re.compile(r"^[\d.,/\-]*\d[\d.,/\-]*$")


def _dose_token_pattern(units: Iterable[str]) -> re.Pattern:
    alts = "|".join(re.escape(u) for u in sorted(set(units), key=len, reverse=True))
    # "40MG", "0.9%", "5-325MG"
    return re.compile(rf"^[\d.,/\-]*\d[\d.,/\-]*(?:{alts})$")


_DEFAULT = IngestConfig()
_DEFAULT_DOSE = _dose_token_pattern(_DEFAULT.dosage_units)


def strip_dosage(description: str, units: Iterable[str] | None = None,
                 forms: Iterable[str] | None = None) -> str:
    """Drop trailing dose tokens (numbers, units, dosage forms) from a medication name.

    >>> strip_dosage("FUROSEMIDE 40 MG TABLET")
    'FUROSEMIDE'
    """
    units_set = set(_DEFAULT.dosage_units if units is None else units)
    forms_set = set(_DEFAULT.dosage_forms if forms is None else forms)
    combined = _DEFAULT_DOSE if units is None else _dose_token_pattern(units_set)
    tokens = description.upper().split()
    while len(tokens) > 1:
        tok = tokens[-1].strip(",;()")
        if (not tok or tok in units_set or tok in forms_set
                or _NUMBER.match(tok) or combined.match(tok)):
            tokens.pop()
        else:
            break
    return " ".join(tokens)


@dataclass(frozen=True)
class LabEvent:
    test_name: str
    time: float
    value: float
    abnormal_flag: str = "none"

    @property
    def flag_key(self) -> str | None:
        if self.abnormal_flag == "none":
            return None
        return f"{self.abnormal_flag.upper()}_{self.test_name}"


@dataclass(frozen=True)
class MedEvent:
    description: str
    pharm_class: str
    pharm_subclass: str
    therapeutic_class: str
    time: float


@dataclass(frozen=True)
class CodedEvent:
    system: str
    code: str
    precision_key: str


@dataclass
class Hospitalization:
    admit_id: str
    patient_id: str
    admit_time: float
    discharge_time: float
    age_at_admission: float
    race: str = ""
    gender: str = ""
    marital_status: str = ""
    insurances: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)
    discharge_disposition: str = ""
    length_of_stay: float = 0.0
    admit_day: str = ""
    discharge_day: str = ""
    labs: list[LabEvent] = field(default_factory=list)
    meds: list[MedEvent] = field(default_factory=list)
    codes: list[CodedEvent] = field(default_factory=list)

    def codes_of(self, system: str) -> list[CodedEvent]:
        return [c for c in self.codes if c.system == system]

    def lab_series(self, test_name: str) -> list[tuple[float, float]]:
        """Time-sorted (time, value) readings for one test."""
        return sorted((e.time, e.value) for e in self.labs if e.test_name == test_name)


@dataclass
class Reject:
    table: str
    line: int
    admit_id: str
    reason: str


@dataclass
class PatientStore:
    """Per-patient, admit-time ordered hospitalizations."""

    patients: dict[str, list[Hospitalization]] = field(default_factory=dict)
    rejects: list[Reject] = field(default_factory=list)
    input_counts: dict[str, int] = field(default_factory=dict)

    def hospitalizations(self) -> Iterator[Hospitalization]:
        for pid in sorted(self.patients):
            yield from self.patients[pid]

    def by_admit_id(self) -> dict[str, Hospitalization]:
        return {h.admit_id: h for h in self.hospitalizations()}

    def __len__(self) -> int:
        return sum(len(v) for v in self.patients.values())

    def validate(self) -> None:
        seen: set[str] = set()
        for pid, stays in self.patients.items():
            for prev, cur in zip(stays, stays[1:]):
                if not cur.admit_time > prev.admit_time:
                    raise DataError(
                        f"patient {pid}: admissions {prev.admit_id} and {cur.admit_id} "
                        "are not strictly ordered by admit_time")
            for h in stays:
                if h.admit_id in seen:
                    raise DataError(f"duplicate admit_id {h.admit_id}")
                seen.add(h.admit_id)


# ---------------------------------------------------------------------------
# parsing


def _open_text(path: str | Path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def _read_table(source, table: str, required: tuple[str, ...], cfg: IngestConfig,
                optional: tuple[str, ...] = ()):
    """Yield (line_number, {canonical: raw}) rows; raise ConfigError on missing columns."""
    reader = csv.reader(source, delimiter=cfg.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError(f"{table} table is empty (header row required)")
    header = [h.strip() for h in header]
    index = {}
    for name in required + optional:
        col = cfg.column(table, name)
        if col in header:
            index[name] = header.index(col)
        elif name in required:
            raise ConfigError(f"{table} table is missing required column {col!r}")
    width = len(header)
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        line = reader.line_num
        if len(row) != width:
            yield line, RecordError(table, line, f"expected {width} fields, got {len(row)}")
            continue
        yield line, {name: row[i].strip() for name, i in index.items()}


def _float(raw: str, what: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"{what} is not finite")
    return value


def _split(raw: str, cfg: IngestConfig) -> list[str]:
    return [v.strip() for v in raw.split(cfg.list_delimiter) if v.strip()] if raw else []


def _parse_admin_row(rec: dict[str, str], cfg: IngestConfig) -> Hospitalization:
    admit = _float(rec["admit_time"], "admit_time")
    discharge = _float(rec["discharge_time"], "discharge_time")
    if discharge < admit:
        raise ValueError("discharge_time precedes admit_time")
    codes = []
    for col, system in CODE_COLUMNS.items():
        for code in _split(rec.get(col, ""), cfg):
            codes.append(CodedEvent(system, code, truncate_code(code, cfg.code_precision)))
    los_raw = rec.get("length_of_stay", "")
    return Hospitalization(
        admit_id=rec["admit_id"],
        patient_id=rec["patient_id"],
        admit_time=admit,
        discharge_time=discharge,
        age_at_admission=_float(rec["age"], "age"),
        race=rec.get("race", ""),
        gender=rec.get("gender", ""),
        marital_status=rec.get("marital_status", ""),
        insurances=_split(rec.get("insurances", ""), cfg),
        locations=_split(rec.get("locations", ""), cfg),
        discharge_disposition=rec.get("discharge_disposition", ""),
        length_of_stay=_float(los_raw, "length_of_stay") if los_raw else (discharge - admit) / 24.0,
        admit_day=rec.get("admit_day", ""),
        discharge_day=rec.get("discharge_day", ""),
        codes=codes,
    )


def _parse_flag(raw: str) -> str:
    flag = raw.strip().lower() or "none"
    if flag not in ABNORMAL_FLAGS:
        raise ValueError(f"unknown abnormal flag {raw!r}")
    return flag


def parse_tables(admin_source, lab_source, pharmacy_source,
                 cfg: IngestConfig | None = None, strict: bool = False) -> PatientStore:
    """Join the administrative, laboratory and pharmacy tables on admit id.

    Sources are paths or open text files. Lab/pharmacy rows whose admit id is
    unknown, whose time lies outside the stay, or which are malformed end up in
    ``store.rejects`` with their line number. With ``strict=True`` malformed
    rows raise :class:`RecordError` instead. Duplicate admit ids and missing
    required columns are always fatal.
    """
    cfg = cfg or IngestConfig()
    store = PatientStore()
    stays: dict[str, Hospitalization] = {}
    counts = {"admin": 0, "lab": 0, "pharmacy": 0}

    def reject(table, line, admit_id, reason, err=None):
        if strict and err is not None:
            raise err
        store.rejects.append(Reject(table, line, admit_id, reason))

    with _Source(admin_source) as fh:
        for line, rec in _read_table(fh, "admin", ADMIN_COLUMNS[:5], cfg, ADMIN_COLUMNS[5:]):
            counts["admin"] += 1
            if isinstance(rec, RecordError):
                reject("admin", line, "", rec.message, rec)
                continue
            if rec["admit_id"] in stays:
                raise DataError(f"admin:{line}: duplicate admit_id {rec['admit_id']!r}")
            try:
                h = _parse_admin_row(rec, cfg)
            except ValueError as exc:
                reject("admin", line, rec["admit_id"], f"malformed: {exc}",
                       RecordError("admin", line, str(exc)))
                continue
            stays[h.admit_id] = h

    with _Source(lab_source) as fh:
        for line, rec in _read_table(fh, "lab", LAB_COLUMNS[:4], cfg, LAB_COLUMNS[4:]):
            counts["lab"] += 1
            if isinstance(rec, RecordError):
                reject("lab", line, "", rec.message, rec)
                continue
            h = stays.get(rec["admit_id"])
            if h is None:
                reject("lab", line, rec["admit_id"], "unknown admit_id")
                continue
            try:
                ev = LabEvent(rec["test_name"].upper(), _float(rec["time"], "time"),
                              _float(rec["value"], "value"), _parse_flag(rec.get("abnormal_flag", "")))
            except ValueError as exc:
                reject("lab", line, rec["admit_id"], f"malformed: {exc}",
                       RecordError("lab", line, str(exc)))
                continue
            if not h.admit_time <= ev.time <= h.discharge_time:
                reject("lab", line, h.admit_id, "time outside hospitalization")
                continue
            h.labs.append(ev)

    with _Source(pharmacy_source) as fh:
        for line, rec in _read_table(fh, "pharmacy", PHARMACY_COLUMNS[:2] + ("time",), cfg,
                                     PHARMACY_COLUMNS[2:5]):
            counts["pharmacy"] += 1
            if isinstance(rec, RecordError):
                reject("pharmacy", line, "", rec.message, rec)
                continue
            h = stays.get(rec["admit_id"])
            if h is None:
                reject("pharmacy", line, rec["admit_id"], "unknown admit_id")
                continue
            try:
                desc = strip_dosage(rec["description"], cfg.dosage_units, cfg.dosage_forms)
                if not desc:
                    raise ValueError("empty medication description")
                ev = MedEvent(desc, rec.get("pharm_class", "").upper(),
                              rec.get("pharm_subclass", "").upper(),
                              rec.get("therapeutic_class", "").upper(),
                              _float(rec["time"], "time"))
            except ValueError as exc:
                reject("pharmacy", line, rec["admit_id"], f"malformed: {exc}",
                       RecordError("pharmacy", line, str(exc)))
                continue
            if not h.admit_time <= ev.time <= h.discharge_time:
                reject("pharmacy", line, h.admit_id, "time outside hospitalization")
                continue
            h.meds.append(ev)

    for h in stays.values():
        h.labs.sort(key=lambda e: (e.time, e.test_name))
        h.meds.sort(key=lambda e: (e.time, e.description))
        store.patients.setdefault(h.patient_id, []).append(h)
    for pid in store.patients:
        store.patients[pid].sort(key=lambda h: (h.admit_time, h.admit_id))
    store.patients = dict(sorted(store.patients.items()))
    store.input_counts = counts
    store.validate()
    if store.rejects:
        log.warning("%d rows rejected during ingest", len(store.rejects))
    return store


class _Source:
    """Context manager accepting a path or an already-open text stream."""

    def __init__(self, src):
        self.src = src
        self.fh = None

    def __enter__(self):
        if isinstance(self.src, (str, Path)):
            self.fh = _open_text(self.src)
            return self.fh
        return self.src

    def __exit__(self, *exc):
        if self.fh is not None:
            self.fh.close()


def write_rejects(rejects: list[Reject], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "line", "admit_id", "reason"])
        for r in rejects:
            w.writerow([r.table, r.line, r.admit_id, r.reason])


# ---------------------------------------------------------------------------
# store (de)serialization

STORE_FORMAT = "akirisk.store/1"


def _stay_to_dict(h: Hospitalization) -> dict:
    return {
        "admit_id": h.admit_id, "patient_id": h.patient_id,
        "admit_time": h.admit_time, "discharge_time": h.discharge_time,
        "age": h.age_at_admission, "race": h.race, "gender": h.gender,
        "marital_status": h.marital_status, "insurances": h.insurances,
        "locations": h.locations, "discharge_disposition": h.discharge_disposition,
        "length_of_stay": h.length_of_stay, "admit_day": h.admit_day,
        "discharge_day": h.discharge_day,
        "labs": [[e.test_name, e.time, e.value, e.abnormal_flag] for e in h.labs],
        "meds": [[m.description, m.pharm_class, m.pharm_subclass, m.therapeutic_class, m.time]
                 for m in h.meds],
        "codes": [[c.system, c.code, c.precision_key] for c in h.codes],
    }


def _stay_from_dict(d: dict) -> Hospitalization:
    return Hospitalization(
        admit_id=d["admit_id"], patient_id=d["patient_id"],
        admit_time=d["admit_time"], discharge_time=d["discharge_time"],
        age_at_admission=d["age"], race=d["race"], gender=d["gender"],
        marital_status=d["marital_status"], insurances=list(d["insurances"]),
        locations=list(d["locations"]), discharge_disposition=d["discharge_disposition"],
        length_of_stay=d["length_of_stay"], admit_day=d["admit_day"],
        discharge_day=d["discharge_day"],
        labs=[LabEvent(*e) for e in d["labs"]],
        meds=[MedEvent(*m) for m in d["meds"]],
        codes=[CodedEvent(*c) for c in d["codes"]],
    )


def save_store(store: PatientStore, path: str | Path) -> None:
    doc = {
        "format": STORE_FORMAT,
        "input_counts": store.input_counts,
        "rejects": [[r.table, r.line, r.admit_id, r.reason] for r in store.rejects],
        "stays": [_stay_to_dict(h) for h in store.hospitalizations()],
    }
    text = json.dumps(doc, separators=(",", ":"))
    if str(path).endswith(".gz"):
        # no name and a fixed mtime keep the archive byte-identical across runs
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(text.encode("utf-8"))
    else:
        Path(path).write_text(text, encoding="utf-8")


def load_store(path: str | Path) -> PatientStore:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != STORE_FORMAT:
        raise DataError(f"{path}: not a patient store ({doc.get('format')!r})")
    store = PatientStore(input_counts=doc.get("input_counts", {}),
                         rejects=[Reject(*r) for r in doc.get("rejects", [])])
    for d in doc["stays"]:
        h = _stay_from_dict(d)
        store.patients.setdefault(h.patient_id, []).append(h)
    store.validate()
    return store

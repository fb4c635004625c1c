"""On-disk formats: the scene dataset layout and the versioned bank container.

All multi-byte numbers are little-endian.
"""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .config import EngineConfig
from .core import (CategoryText, FormatError, ImageText, Mask, PatchFeatureMap, SceneBundle,
                   decode_rle, encode_rle)
from .featbank import ObjectBank, PatchBank
from .pipeline import BankSet
from .textbank import TextBank

BANK_MAGIC = b"TMUADBNK"
BANK_VERSION = 1
MANIFEST = "manifest.json"


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror or exc})") from None


def _read_json(path: Path):
    raw = _read_bytes(path)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 at byte {exc.start}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise FormatError(f"{path}: malformed JSON at byte {offset}: {exc.msg}") from None


def _read_rle(path: Path) -> Mask:
    try:
        return decode_rle(_read_bytes(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)


# --- scene dataset ------------------------------------------------------------------

def write_scene(scene: SceneBundle, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mask_files = {}
    for i, (name, m) in enumerate(scene.category_masks.items()):
        mask_files[name] = f"category_{i:03d}.rle"
        (d / mask_files[name]).write_bytes(encode_rle(m))
    text = {
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "entries": [{"class_name": e.class_name, "count": e.count,
                     "position": e.position, "size": e.size} for e in scene.text.entries],
        "category_masks": mask_files,
        "provenance": list(scene.provenance),
    }
    (d / "text.json").write_text(json.dumps(text, indent=1, sort_keys=True))

    dim = scene.object_dim or 0
    obj_masks = []
    for i, (_, m) in enumerate(scene.objects):
        obj_masks.append(f"object_{i:03d}.rle")
        (d / obj_masks[-1]).write_bytes(encode_rle(m))
    (d / "objects.json").write_text(json.dumps(
        {"count": len(scene.objects), "dim": dim, "masks": obj_masks}, indent=1))
    feats = b"".join(np.asarray(f, dtype="<f4").tobytes() for f, _ in scene.objects)
    (d / "objects.bin").write_bytes(struct.pack("<II", len(scene.objects), dim) + feats)

    table = [{"id": lid, "hp": g.shape[0], "wp": g.shape[1], "dim": g.shape[2]}
             for lid, g in scene.patches.layers]
    (d / "patches.json").write_text(json.dumps({"layers": table}, indent=1))
    blob = [struct.pack("<I", len(table))]
    blob += [struct.pack("<III", t["hp"], t["wp"], t["dim"]) for t in table]
    blob += [np.asarray(g, dtype="<f4").tobytes() for _, g in scene.patches.layers]
    (d / "patches.bin").write_bytes(b"".join(blob))

    if scene.gt_anomaly is not None:
        (d / "gt.rle").write_bytes(encode_rle(scene.gt_anomaly))


def read_scene(directory: str | Path, label: str = "normal", category: str = "default",
               gt_path: str | Path | None = None) -> SceneBundle:
    d = Path(directory)
    text_path = d / "text.json"
    t = _read_json(text_path)
    try:
        entries = tuple(CategoryText(e["class_name"], e["count"], e["position"], e["size"])
                        for e in t["entries"])
        width, height = int(t["width"]), int(t["height"])
        text = ImageText(t["image_id"], entries)
        cat_masks = {name: _read_rle(d / fname) for name, fname in t["category_masks"].items()}
        provenance = tuple(t.get("provenance", ()))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{text_path}: invalid description ({exc})") from None

    obj_json = d / "objects.json"
    meta = _read_json(obj_json)
    obj_bin = d / "objects.bin"
    raw = _read_bytes(obj_bin)
    if len(raw) < 8:
        raise FormatError(f"{obj_bin}: truncated header")
    count, dim = struct.unpack_from("<II", raw)
    if (count, dim) != (meta.get("count"), meta.get("dim")):
        raise FormatError(f"{obj_bin}: header ({count}, {dim}) disagrees with {obj_json}")
    if len(raw) != 8 + 4 * count * dim:
        raise FormatError(f"{obj_bin}: size mismatch, expected {8 + 4 * count * dim} bytes, "
                          f"found {len(raw)}")
    feats = np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, dim).astype(np.float32)
    masks = meta.get("masks", [])
    if len(masks) != count:
        raise FormatError(f"{obj_json}: {len(masks)} masks listed for {count} objects")
    objects = tuple((feats[i], _read_rle(d / masks[i])) for i in range(count))

    pj = d / "patches.json"
    table = _read_json(pj).get("layers", [])
    pb = d / "patches.bin"
    raw = _read_bytes(pb)
    if len(raw) < 4:
        raise FormatError(f"{pb}: truncated header")
    (n_layers,) = struct.unpack_from("<I", raw)
    if n_layers != len(table):
        raise FormatError(f"{pb}: {n_layers} layers, {pj} lists {len(table)}")
    off = 4
    shapes = []
    for t_layer in table:
        if off + 12 > len(raw):
            raise FormatError(f"{pb}: truncated layer table")
        shape = struct.unpack_from("<III", raw, off)
        off += 12
        if shape != (t_layer["hp"], t_layer["wp"], t_layer["dim"]):
            raise FormatError(f"{pb}: layer {t_layer['id']!r} shape {shape} disagrees with {pj}")
        shapes.append(shape)
    expected = off + 4 * sum(hp * wp * dm for hp, wp, dm in shapes)
    if len(raw) != expected:
        raise FormatError(f"{pb}: size mismatch, expected {expected} bytes, found {len(raw)}")
    layers = []
    for t_layer, shape in zip(table, shapes):
        n = shape[0] * shape[1] * shape[2]
        grid = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        layers.append((t_layer["id"], grid.astype(np.float32)))
        off += 4 * n

    gt = _read_rle(Path(gt_path)) if gt_path is not None else None
    try:
        return SceneBundle(text.image_id, width, height, text, cat_masks, objects,
                           PatchFeatureMap(tuple(layers)), gt, label, category, provenance)
    except ValueError as exc:
        raise FormatError(f"{d}: inconsistent scene ({exc})") from None


def write_dataset(scenes, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    images = []
    for i, s in enumerate(scenes):
        sub = f"{i:05d}_{_safe_name(s.image_id)}"
        write_scene(s, root / sub)
        images.append({"id": s.image_id, "category": s.category, "label": s.label,
                       "dir": sub, "gt": f"{sub}/gt.rle" if s.gt_anomaly is not None else None})
    (root / MANIFEST).write_text(json.dumps({"images": images}, indent=1))


def ingest_dataset(root: str | Path) -> list[SceneBundle]:
    """Read every image listed in ``root/manifest.json``; categories land on each bundle."""
    root = Path(root)
    manifest = _read_json(root / MANIFEST)
    try:
        images = manifest["images"]
        scenes = []
        for item in images:
            gt = item.get("gt")
            scenes.append(read_scene(root / item["dir"], item["label"],
                                     item.get("category", "default"),
                                     root / gt if gt else None))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{root / MANIFEST}: invalid manifest ({exc})") from None
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{root / MANIFEST}: {exc}") from None
    return scenes


# --- bank container -------------------------------------------------------------------

def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _blob(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    return struct.pack("<II", *arr.shape) + arr.tobytes()


def _sized(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def dump_banks(banks: BankSet) -> bytes:
    """Canonical container bytes; centroids are stored as float32."""
    text_meta = {cat: {"bank_resolution": list(tb.bank_resolution),
                       "entries": [{"image_id": t.image_id,
                                    "entries": [[e.class_name, e.count, e.position, e.size]
                                                for e in t.entries]}
                                   for t in tb.entries],
                       "size_ranges": {c: list(r) for c, r in tb.size_ranges.items()},
                       "occurrence": list(tb.occurrence)}
                 for cat, tb in sorted(banks.text_banks.items())}
    text = [_sized(_canonical_json(text_meta))]
    for cat, tb in sorted(banks.text_banks.items()):
        text += [_sized(encode_rle(m)) for m in tb.occurrence.values()]

    ob = banks.object_bank
    obj = [_sized(_canonical_json({"k": ob.k, "dim": ob.dim,
                                   "categories": list(ob.centroids_by_category)}))]
    obj += [_blob(a) for a in ob.centroids_by_category.values()]

    pb = banks.patch_bank
    pat = [_sized(_canonical_json({"k": pb.k, "categories": {
        cat: list(layers) for cat, layers in pb.centroids.items()}}))]
    pat += [_blob(a) for layers in pb.centroids.values() for a in layers.values()]

    return (BANK_MAGIC + struct.pack("<H", BANK_VERSION)
            + _section(b"CONF", _canonical_json(banks.config.to_dict()))
            + _section(b"TEXT", b"".join(text))
            + _section(b"OBJB", b"".join(obj))
            + _section(b"PATB", b"".join(pat)))


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data, self.off, self.where = data, 0, where

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"{self.where}: truncated")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def sized(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def json(self):
        try:
            return json.loads(self.sized())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{self.where}: malformed JSON at byte {exc.pos}") from None

    def blob(self) -> np.ndarray:
        n, dim = self.unpack("<II")
        return np.frombuffer(self.take(4 * n * dim), dtype="<f4").reshape(n, dim).astype(np.float32)


def load_banks(data: bytes, where: str = "bank") -> BankSet:
    r = _Reader(data, where)
    if r.take(len(BANK_MAGIC)) != BANK_MAGIC:
        raise FormatError(f"{where}: not a bank container (bad magic)")
    (version,) = r.unpack("<H")
    if version != BANK_VERSION:
        raise FormatError(f"{where}: bank format version {version}, "
                          f"this build reads version {BANK_VERSION}")
    sections = {}
    while r.off < len(data):
        tag = r.take(4)
        (n,) = r.unpack("<Q")
        sections[tag] = _Reader(r.take(n), f"{where}:{tag.decode('ascii', 'replace')}")
    missing = {b"CONF", b"TEXT", b"OBJB", b"PATB"} - set(sections)
    if missing:
        raise FormatError(f"{where}: missing sections {sorted(m.decode() for m in missing)}")

    try:
        config = EngineConfig.from_dict(json.loads(sections[b"CONF"].data))
        t = sections[b"TEXT"]
        meta = t.json()
        text_banks = {}
        for cat, m in meta.items():
            occ = {name: decode_rle(t.sized()) for name in m["occurrence"]}
            entries = tuple(ImageText(e["image_id"], tuple(CategoryText(*row) for row in e["entries"]))
                            for e in m["entries"])
            text_banks[cat] = TextBank(entries, {c: tuple(v) for c, v in m["size_ranges"].items()},
                                       occ, tuple(m["bank_resolution"]))

        o = sections[b"OBJB"]
        om = o.json()
        object_bank = ObjectBank({cat: o.blob() for cat in om["categories"]}, om["k"], om["dim"])

        p = sections[b"PATB"]
        pm = p.json()
        patch_bank = PatchBank({cat: {lid: p.blob() for lid in layers}
                                for cat, layers in pm["categories"].items()}, pm["k"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: corrupt bank container ({exc})") from None
    return BankSet(text_banks, object_bank, patch_bank, config)


def save_bank_file(banks: BankSet, path: str | Path) -> None:
    Path(path).write_bytes(dump_banks(banks))


def load_bank_file(path: str | Path) -> BankSet:
    path = Path(path)
    return load_banks(_read_bytes(path), str(path))

"""
On-disk dataset format.

    <dir>/manifest.json          ids, split assignment, config hash
    <dir>/<id>/aerial.png        8-bit RGB
    <dir>/<id>/ground.png        8-bit RGB
    <dir>/<id>/height.pfm        Portable FloatMap, single channel, little-endian
    <dir>/<id>/meta.json         scene seed, camera, normalization, config hash

Images round-trip up to 8-bit quantization; height maps are float32 and
round-trip bit-exactly. `read_dataset` re-validates every sample through the
Pydantic models and reports failures as FormatError(sample_id, field).
"""

import json
import logging
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, ValidationError

from aerial2ground.domain.models import GroundCamera, HeightNormalization, SceneClass
from aerial2ground.domain.provenance import bytes_hash, file_hash
from aerial2ground.domain.samples import AerialImage, GroundView, HeightMap, PairedSample
from aerial2ground.errors import FormatError, IoError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
Split = Literal["train", "test"]


class SampleMeta(BaseModel):
    scene_seed: int = Field(..., ge=0)
    camera: GroundCamera
    normalization: HeightNormalization
    generator_config_hash: str = ""
    scene_class: SceneClass = SceneClass.OPEN


class DatasetManifest(BaseModel):
    schema_version: Literal[1] = 1
    config_hash: str = ""
    ids: list[str] = Field(default_factory=list)
    splits: dict[str, Split] = Field(default_factory=dict)

    def ids_in(self, split: Split) -> list[str]:
        return [i for i in self.ids if self.splits.get(i) == split]


# ── Codecs ───────────────────────────────────────────────────────────


def write_png(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def write_pfm(path: Path, values: np.ndarray) -> None:
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-to-top.
    path.write_bytes(header + np.flipud(values).astype("<f4").tobytes())


def read_pfm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0].strip() != b"Pf":
        raise FormatError(f"{path.name} is not a single-channel PFM file")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise FormatError(f"{path.name} has a malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    payload = lines[3]
    if len(payload) != w * h * 4:
        raise FormatError(f"{path.name} holds {len(payload)} bytes, expected {w * h * 4}")
    return np.flipud(np.frombuffer(payload, dtype=dtype).reshape(h, w)).astype(np.float32)


# ── Dataset IO ───────────────────────────────────────────────────────


def write_sample(sample: PairedSample, root: Path, generator_config_hash: str = "") -> None:
    d = root / sample.id
    d.mkdir(parents=True, exist_ok=True)
    write_png(d / "aerial.png", sample.aerial.pixels)
    write_png(d / "ground.png", sample.ground.pixels)
    write_pfm(d / "height.pfm", sample.height.values)
    meta = SampleMeta(
        scene_seed=sample.scene_seed,
        camera=sample.ground.camera,
        normalization=sample.height.normalization,
        generator_config_hash=generator_config_hash,
        scene_class=sample.scene_class,
    )
    (d / "meta.json").write_text(json.dumps(meta.model_dump(mode="json"), indent=2, sort_keys=True))


def write_manifest(root: Path, manifest: DatasetManifest) -> None:
    (root / MANIFEST).write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True))


def write_dataset(
    samples: list[PairedSample],
    root: Path,
    *,
    splits: dict[str, Split] | None = None,
    config_hash: str = "",
) -> DatasetManifest:
    """Write samples plus a manifest; ids default to the train split."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for sample in samples:
            write_sample(sample, root, config_hash)
        manifest = DatasetManifest(
            config_hash=config_hash,
            ids=[s.id for s in samples],
            splits={s.id: (splits or {}).get(s.id, "train") for s in samples},
        )
        write_manifest(root, manifest)
    except OSError as exc:
        raise IoError(f"cannot write dataset to {root}: {exc}") from exc
    logger.info("Wrote %d samples to %s", len(samples), root)
    return manifest


def read_manifest(root: Path) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        ids = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
        return DatasetManifest(ids=ids, splits={i: "train" for i in ids})
    try:
        return DatasetManifest.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise FormatError(f"malformed manifest: {exc}", field="manifest") from exc


def _field_of(exc: ValidationError) -> str:
    errors = exc.errors()
    return ".".join(str(p) for p in errors[0]["loc"]) if errors and errors[0]["loc"] else "sample"


def read_sample(root: Path, sample_id: str) -> PairedSample:
    d = Path(root) / sample_id
    paths = {name: d / f for name, f in (("aerial", "aerial.png"), ("ground", "ground.png"), ("height", "height.pfm"), ("meta", "meta.json"))}
    for field, path in paths.items():
        if not path.exists():
            raise FormatError(f"missing {path.name}", sample_id=sample_id, field=field)
    try:
        meta = SampleMeta.model_validate_json(paths["meta"].read_text())
    except ValidationError as exc:
        raise FormatError(f"invalid meta.json: {exc}", sample_id=sample_id, field=f"meta.{_field_of(exc)}") from exc
    try:
        heights = read_pfm(paths["height"])
    except FormatError as exc:
        raise FormatError(str(exc), sample_id=sample_id, field="height") from exc
    try:
        return PairedSample(
            id=sample_id,
            aerial=AerialImage(pixels=read_png(paths["aerial"])),
            height=HeightMap(values=heights, normalization=meta.normalization),
            ground=GroundView(pixels=read_png(paths["ground"]), camera=meta.camera),
            scene_seed=meta.scene_seed,
            scene_class=meta.scene_class,
        )
    except ValidationError as exc:
        raise FormatError(f"invalid sample: {exc}", sample_id=sample_id, field=_field_of(exc)) from exc
    except OSError as exc:
        raise FormatError(f"unreadable image: {exc}", sample_id=sample_id, field="image") from exc


def read_dataset(root: Path, split: Split | None = None) -> list[PairedSample]:
    """Read (and validate) every sample, or only those of one split."""
    manifest = read_manifest(root)
    ids = manifest.ids if split is None else manifest.ids_in(split)
    return [read_sample(root, i) for i in ids]


def dataset_hash(root: Path) -> str:
    """Content hash of the manifest, or of the id list when there is none."""
    path = Path(root) / MANIFEST
    if path.exists():
        return file_hash(path)
    return bytes_hash("\n".join(read_manifest(root).ids).encode())

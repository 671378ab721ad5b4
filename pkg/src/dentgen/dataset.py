"""End-to-end dataset generation, splits, ingestion, and manifest verification.

Every sample is fully determined by (config, global seed, sample index):
deformation state comes from the rng stream (seed, scene, 0), pose and light
from (seed, scene, 1 + view), and the background pick from a counter hash.
The manifest is line-delimited JSON with a header row carrying the config
hash; per-file SHA-256 digests make reruns and transfers verifiable.
"""

from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import composite as comp
from . import deform, render
from .config import Config, config_hash
from .errors import ConfigurationError, IngestionError, ParameterError, SplitError
from .mesh import CanParams, generate_can

MANIFEST_NAME = "manifest.jsonl"
_MANIFEST_KIND = "dentgen-manifest"


@dataclass
class SampleRecord:
    """One manifest row; generation fields are None for ingested photos."""

    index: int
    label: str
    file: str
    digest: str
    mask_file: str | None = None
    mask_digest: str | None = None
    background_id: str | None = None
    quadrant: int | None = None
    deformation: dict | None = None
    pose: dict | None = None
    light: dict | None = None
    source: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "label": self.label,
            "file": self.file,
            "digest": self.digest,
            "mask_file": self.mask_file,
            "mask_digest": self.mask_digest,
            "background_id": self.background_id,
            "quadrant": self.quadrant,
            "deformation": self.deformation,
            "pose": self.pose,
            "light": self.light,
            "source": self.source,
        }


@dataclass
class DatasetManifest:
    root: Path
    config_hash: str
    seed: int
    background_mode: str
    samples: list[SampleRecord] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def image_path(self, record: SampleRecord) -> Path:
        return self.root / record.file

    def labels(self) -> list[str]:
        return [s.label for s in self.samples]

    def save(self, path: Path | None = None) -> Path:
        path = path or self.root / MANIFEST_NAME
        header = {
            "kind": _MANIFEST_KIND,
            "version": 1,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "background_mode": self.background_mode,
            "n_samples": len(self.samples),
            **self.extra,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(s.to_dict(), sort_keys=True) for s in self.samples]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ParameterError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("kind") != _MANIFEST_KIND:
            raise ParameterError(f"{path}: not a dataset manifest")
        extra = {
            k: v
            for k, v in header.items()
            if k not in ("kind", "version", "config_hash", "seed", "background_mode", "n_samples")
        }
        samples = [SampleRecord(**json.loads(ln)) for ln in lines[1:] if ln.strip()]
        return cls(
            root=path.parent,
            config_hash=header.get("config_hash", ""),
            seed=header.get("seed", 0),
            background_mode=header.get("background_mode", ""),
            samples=samples,
            extra=extra,
        )


@dataclass
class Split:
    train_indices: list[int]
    test_indices: list[int]
    fraction: float
    stratified: bool = True


@dataclass(frozen=True)
class SceneAssets:
    """Shared read-only inputs for all samples of one config."""

    mesh: object
    keys: list
    tab_key: object
    seal_key: object
    displace_params: tuple
    texture: np.ndarray


def build_assets(cfg: Config) -> SceneAssets:
    can = generate_can(
        CanParams(
            radius=cfg.can.radius,
            height=cfg.can.height,
            taper_fraction=cfg.can.taper_fraction,
            radial_segments=cfg.can.radial_segments,
            height_segments=cfg.can.height_segments,
            tab_length_fraction=cfg.can.tab_length_fraction,
            seal_radius_fraction=cfg.can.seal_radius_fraction,
        )
    )
    lattice = deform.Lattice.around(can, cfg.lattice.resolution, cfg.lattice.margin)
    keys = deform.builtin_lattice_keys(can, lattice, cfg.lattice)
    tab_key, seal_key = deform.make_tab_seal_keys(
        can, cfg.deform.tab_angle_deg, cfg.deform.seal_angle_deg
    )
    displace_params = tuple(
        deform.DisplaceParams(
            noise_seed=d.noise_seed,
            scale=d.scale,
            strength=d.strength,
            bias=d.bias,
            group=d.group,
        )
        for d in cfg.deform.displace
    )
    if cfg.label_texture:
        with Image.open(cfg.label_texture) as im:
            texture = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    else:
        texture = render.default_label_texture()
    return SceneAssets(
        mesh=can,
        keys=keys,
        tab_key=tab_key,
        seal_key=seal_key,
        displace_params=displace_params,
        texture=texture,
    )


def _png_bytes(array: np.ndarray, mode: str | None = None) -> bytes:
    img = Image.fromarray(array) if mode is None else Image.fromarray(array, mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_png_bytes(mask: np.ndarray) -> bytes:
    """1-bit PNG encoding of a boolean mask."""
    img = Image.fromarray(mask.astype(np.uint8) * 255).convert("1")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def render_sample(
    cfg: Config, assets: SceneAssets, index: int, background_mode: str, pool
) -> tuple[SampleRecord, bytes, bytes]:
    """Deterministically produce one sample's record plus PNG payloads."""
    views = max(1, cfg.views_per_scene)
    scene, view = divmod(index, views)
    label = deform.LABEL_DEFORMED if scene % 2 == 0 else deform.LABEL_NON_DEFORMED
    quadrant = 1 + index % 4

    scene_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, scene, 0]))
    state = deform.sample_deformation(
        scene_rng,
        assets.keys,
        label,
        cfg.deform.lattice_weight_range,
        cfg.deform.displace_weight_range,
    )
    view_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, scene, 1 + view]))
    pose = render.sample_camera(view_rng, quadrant, cfg.camera)
    light = render.sample_light(view_rng, cfg.light)

    deformed = deform.apply_deformation_state(
        assets.mesh, state, assets.keys, assets.tab_key, assets.seal_key, assets.displace_params
    )
    background = "key_green" if background_mode == "pool" else "black"
    frame = render.rasterize(
        deformed,
        pose,
        light,
        background=background,
        texture=assets.texture,
        key_color=tuple(cfg.composite.key_color),
    )

    if background_mode == "pool":
        key = tuple(cfg.composite.key_color)
        mask = comp.chroma_mask(frame.rgb, key, cfg.composite.key_tolerance)
        refined = comp.refine_mask(mask, cfg.composite)
        bg_name, bg_img = pool.pick(cfg.seed, index)
        rgb = comp.composite(frame.rgb, refined, bg_img, key)
        out_mask = refined
        background_id = bg_name
    else:
        rgb = frame.rgb
        out_mask = frame.coverage
        background_id = "key_black"

    img_bytes = _png_bytes(rgb)
    mask_bytes = mask_png_bytes(out_mask)
    record = SampleRecord(
        index=index,
        label=label,
        file=f"{label}/{index:06d}.png",
        digest=_sha256(img_bytes),
        mask_file=f"masks/{index:06d}.png",
        mask_digest=_sha256(mask_bytes),
        background_id=background_id,
        quadrant=quadrant,
        deformation={
            "lattice_weights": state.lattice_weights,
            "displace_weights": list(state.displace_weights),
            "tab_open": state.tab_open,
            "seal_open": state.seal_open,
        },
        pose=pose.to_dict(),
        light=light.to_dict(),
    )
    return record, img_bytes, mask_bytes


def generate_dataset(
    cfg: Config,
    n_samples: int,
    background_mode: str,
    out_dir: str | Path,
    jobs: int = 1,
) -> tuple[DatasetManifest, int | None]:
    """Generate a balanced labeled dataset; returns (manifest, files_changed_vs_previous).

    files_changed is None when the output directory had no previous manifest.
    """
    if n_samples <= 0 or n_samples % 2 != 0:
        raise ParameterError(f"n_samples must be a positive even number, got {n_samples}")
    views = max(1, cfg.views_per_scene)
    if n_samples % (2 * views) != 0:
        raise ParameterError(
            f"n_samples must be a multiple of 2*views_per_scene={2 * views}, got {n_samples}"
        )
    if background_mode not in ("black", "pool"):
        raise ParameterError(f"background_mode must be black or pool, got {background_mode!r}")
    pool = None
    if background_mode == "pool":
        if not cfg.background_dir:
            raise ConfigurationError("pool background mode requires config.background_dir")
        pool = comp.BackgroundPool(cfg.background_dir)

    out_dir = Path(out_dir)
    previous = None
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists():
        previous = {
            s.index: (s.digest, s.mask_digest) for s in DatasetManifest.load(manifest_path).samples
        }
    for sub in (deform.LABEL_DEFORMED, deform.LABEL_NON_DEFORMED, "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    assets = build_assets(cfg)

    def make(i: int):
        record, img_bytes, mask_bytes = render_sample(cfg, assets, i, background_mode, pool)
        (out_dir / record.file).write_bytes(img_bytes)
        (out_dir / record.mask_file).write_bytes(mask_bytes)
        return record

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(make, range(n_samples)))
    else:
        records = [make(i) for i in range(n_samples)]
    records.sort(key=lambda r: r.index)

    manifest = DatasetManifest(
        root=out_dir,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        background_mode=background_mode,
        samples=records,
        extra={"views_per_scene": views},
    )
    manifest.save()

    changed = None
    if previous is not None:
        changed = sum(
            1
            for r in records
            if previous.get(r.index) != (r.digest, r.mask_digest)
        )
        changed += sum(1 for i in previous if i >= n_samples)
    return manifest, changed


def split(manifest: DatasetManifest, fraction: float, seed: int) -> Split:
    """Stratified shuffle split preserving per-class proportions within one sample."""
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"fraction must be in (0, 1), got {fraction}")
    by_label: dict[str, list[int]] = {}
    for s in manifest.samples:
        by_label.setdefault(s.label, []).append(s.index)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    train, test = [], []
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        if len(idx) < 2:
            raise SplitError(f"class {label!r} has {len(idx)} samples; need >= 2 to split")
        rng.shuffle(idx)
        n_train = int(round(fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train += idx[:n_train].tolist()
        test += idx[n_train:].tolist()
    return Split(
        train_indices=sorted(train), test_indices=sorted(test), fraction=fraction
    )


def subset_manifest(manifest: DatasetManifest, indices: list[int], role: str) -> DatasetManifest:
    chosen = set(indices)
    return DatasetManifest(
        root=manifest.root,
        config_hash=manifest.config_hash,
        seed=manifest.seed,
        background_mode=manifest.background_mode,
        samples=[s for s in manifest.samples if s.index in chosen],
        extra={**manifest.extra, "split_role": role},
    )


def ingest_real(src_dir: str | Path, out_dir: str | Path, size: int = 512) -> DatasetManifest:
    """Build a manifest from real photos under `deformed/` and `non_deformed/` dirs.

    Photos are center-cropped square and resampled to the render resolution so
    synthetic-trained models evaluate on a matching format.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    records = []
    index = 0
    for label in (deform.LABEL_DEFORMED, deform.LABEL_NON_DEFORMED):
        class_dir = src_dir / label
        files = sorted(p for p in class_dir.iterdir() if p.is_file()) if class_dir.is_dir() else []
        if not files:
            raise IngestionError(f"missing or empty class directory: {class_dir}")
        (out_dir / label).mkdir(parents=True, exist_ok=True)
        for path in files:
            try:
                with Image.open(path) as im:
                    rgb = np.asarray(im.convert("RGB"))
            except (UnidentifiedImageError, OSError) as e:
                raise IngestionError(f"unreadable image: {path}") from e
            processed = comp.resize_to_square(rgb, size)
            blob = _png_bytes(processed)
            rel = f"{label}/{index:06d}.png"
            (out_dir / rel).write_bytes(blob)
            records.append(
                SampleRecord(
                    index=index,
                    label=label,
                    file=rel,
                    digest=_sha256(blob),
                    source=str(path),
                )
            )
            index += 1
    manifest = DatasetManifest(
        root=out_dir, config_hash="", seed=0, background_mode="real", samples=records
    )
    manifest.save()
    return manifest


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Recompute digests for every listed file; returns mismatch descriptions."""
    manifest = DatasetManifest.load(manifest_path)
    problems = []
    for s in manifest.samples:
        for rel, expect in ((s.file, s.digest), (s.mask_file, s.mask_digest)):
            if rel is None:
                continue
            path = manifest.root / rel
            if not path.exists():
                problems.append(f"missing: {rel}")
            elif _sha256(path.read_bytes()) != expect:
                problems.append(f"digest mismatch: {rel}")
    return problems

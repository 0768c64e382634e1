"""Dataset manifests: one JSON object per line.

Every line carries ``path``, ``doc_id``, ``writer_id`` and ``split``
(train, validation or test). A convenience importer derives ids from
``<writer>-<doc>.<ext>`` file names for datasets labeled that way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import container

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    doc_id: str
    writer_id: str
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def __post_init__(self) -> None:
        ids = [e.doc_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate document ids: {dupes[:5]}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(
                    f"{e.doc_id}: split must be one of {SPLITS}, got {e.split!r}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def labels(self) -> dict[str, str]:
        return {e.doc_id: e.writer_id for e in self.entries}

    @classmethod
    def load(cls, path: str | Path, check_paths: bool = True) -> "Manifest":
        path = Path(path)
        entries = []
        for lineno, raw in enumerate(path.read_text().splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entry = ManifestEntry(
                    path=Path(obj["path"]),
                    doc_id=str(obj["doc_id"]),
                    writer_id=str(obj["writer_id"]),
                    split=str(obj["split"]),
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
            entries.append(entry)
        manifest = cls(entries)
        if check_paths:
            missing = [str(e.path) for e in manifest.entries if not e.path.exists()]
            if missing:
                raise FileNotFoundError(
                    f"{len(missing)} manifest paths missing, first: {missing[0]}"
                )
        return manifest

    def save(self, path: str | Path) -> bool:
        lines = [
            json.dumps(
                {
                    "path": str(e.path),
                    "doc_id": e.doc_id,
                    "writer_id": e.writer_id,
                    "split": e.split,
                }
            )
            for e in self.entries
        ]
        return container.write_bytes(path, ("\n".join(lines) + "\n").encode())

    @classmethod
    def from_directory(
        cls,
        root: str | Path,
        split: str = "test",
        extensions: tuple[str, ...] = (".png", ".pgm", ".pbm"),
    ) -> "Manifest":
        """Build a manifest from ``<writer>-<doc>.<ext>`` file names."""
        root = Path(root)
        entries = []
        for p in sorted(root.iterdir()):
            if p.suffix.lower() not in extensions or not p.is_file():
                continue
            stem = p.stem
            if "-" not in stem:
                raise ValueError(
                    f"{p.name}: expected '<writer>-<doc>{p.suffix}' naming"
                )
            writer_id = stem.split("-", 1)[0]
            entries.append(
                ManifestEntry(path=p, doc_id=stem, writer_id=writer_id, split=split)
            )
        if not entries:
            raise ValueError(f"no images with extensions {extensions} in {root}")
        return cls(entries)

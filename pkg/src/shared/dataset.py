"""
Utterance manifests: which recordings and feature tensors belong to which
utterance, subject and split.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from shared.ctc import Alphabet
from shared.errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
SPLITS = ("train", "test")


@dataclass
class ManifestEntry:
    utterance_id: str
    transcript: str
    subject_id: int
    split: str
    paths: dict[str, str] = field(default_factory=dict)


@dataclass
class Manifest:
    """Entries plus the directory their relative paths resolve against."""

    root: Path
    entries: list[ManifestEntry]

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}; expected one of {', '.join(SPLITS)}")
        return [e for e in self.entries if e.split == name]

    def path(self, entry: ManifestEntry, key: str) -> Path:
        if key not in entry.paths:
            raise DataError(f"utterance {entry.utterance_id} has no {key} file in the manifest")
        return self.root / entry.paths[key]

    def require(self, keys: list[str], entries: list[ManifestEntry] | None = None) -> None:
        """
        Raises:
            DataError: Naming the first referenced file that does not exist
        """
        for entry in self.entries if entries is None else entries:
            for key in keys:
                path = self.path(entry, key)
                if not path.is_file():
                    raise DataError(f"missing {key} file: {path}")

    def subjects(self, split: str) -> list[int]:
        return sorted({e.subject_id for e in self.split(split)})

    def save(self) -> Path:
        path = self.root / MANIFEST_FILE
        self.root.mkdir(parents=True, exist_ok=True)
        payload = {"utterances": [asdict(e) for e in self.entries]}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return path


def load_manifest(data_dir: str | Path, alphabet: Alphabet = Alphabet()) -> Manifest:
    """
    Read ``manifest.json`` from a data directory and validate transcripts.

    Raises:
        DataError: If the manifest is missing or malformed, a transcript holds
            a character outside the alphabet, or a subject appears in both splits
    """
    root = Path(data_dir)
    path = root / MANIFEST_FILE
    if not path.is_file():
        raise DataError(f"manifest not found: {path} (run synth-data first)")
    try:
        raw = json.loads(path.read_text())
        entries = [ManifestEntry(**item) for item in raw["utterances"]]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"malformed manifest {path}: {e}") from e

    for entry in entries:
        entry.transcript = entry.transcript.lower()
        try:
            alphabet.encode(entry.transcript)
        except DataError as e:
            raise DataError(f"utterance {entry.utterance_id}: {e}") from e
        if entry.split not in SPLITS:
            raise DataError(f"utterance {entry.utterance_id} has unknown split {entry.split!r}")
    manifest = Manifest(root, entries)
    shared_subjects = set(manifest.subjects("train")) & set(manifest.subjects("test"))
    if shared_subjects:
        raise DataError(f"subjects {sorted(shared_subjects)} appear in both train and test splits")
    return manifest

"""
Tab-separated manifests, one pair per line:

    audio_path<TAB>transcript[<TAB>label]

Relative audio paths are taken relative to the manifest's directory. Lines
with the wrong number of fields, an empty transcript or a missing audio file
are skipped and counted.
"""
import csv
import logging
import os
from dataclasses import dataclass

import pandas as pd

from ctal.errors import ManifestError

logger = logging.getLogger(__name__)

COLUMNS = ["audio_path", "transcript", "label"]


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    transcript: str
    label: str = None

    @property
    def utterance_id(self):
        return os.path.splitext(os.path.basename(self.audio_path))[0]


def read_manifest(path, labelled=False, check_audio=True):
    """
    :param labelled: require the third (label) column
    :param check_audio: skip entries whose audio file does not exist
    :return: list of ManifestEntry
    """
    if not os.path.isfile(path):
        raise ManifestError(f"{path}: no such manifest")
    bad_lines = []
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=COLUMNS, index_col=False, dtype=str,
                            quoting=csv.QUOTE_NONE, keep_default_na=False, na_values=[], skip_blank_lines=True,
                            encoding="utf-8", engine="python", on_bad_lines=lambda fields: bad_lines.append(fields))
    except UnicodeDecodeError as e:
        raise ManifestError(f"{path}: not UTF-8 ({e})") from e
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=COLUMNS)

    base = os.path.dirname(os.path.abspath(path))
    entries = []
    skipped = len(bad_lines)
    for row in frame.itertuples(index=False):
        audio_path, transcript, label = (None if pd.isna(v) else str(v) for v in row)
        if not audio_path or not transcript or (labelled and not label):
            skipped += 1
            continue
        if not os.path.isabs(audio_path):
            audio_path = os.path.join(base, audio_path)
        if check_audio and not os.path.isfile(audio_path):
            skipped += 1
            continue
        entries.append(ManifestEntry(audio_path, transcript, label or None))

    if skipped:
        logger.warning("Skipped %d unreadable manifest lines in %s", skipped, path)
    if not entries:
        raise ManifestError(f"{path}: no usable entries")
    logger.info("Read %d entries from %s", len(entries), path)
    return entries


def write_manifest(path, entries, relative_to=None):
    """Writes entries, making audio paths relative to `relative_to` when given."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for entry in entries:
            fields = [entry.audio_path, entry.transcript] + ([entry.label] if entry.label is not None else [])
            if any("\t" in field or "\n" in field for field in fields):
                raise ManifestError(f"{entry.audio_path}: fields may not contain tabs or newlines")
            if relative_to:
                fields[0] = os.path.relpath(fields[0], relative_to)
            f.write("\t".join(fields) + "\n")

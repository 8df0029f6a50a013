"""Local content-addressed store standing in for IPFS/Filecoin/Arweave."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from .codec import Cid, canonical_bytes, cid_of_bytes, decode


class MissingArtifact(KeyError):
    pass


class ContentStore:
    """Maps cids to canonical bytes; optionally mirrored to ``root/<hex>``.

    Reads re-hash the bytes, so a tampered file surfaces as a missing
    artifact rather than as silently different content.
    """

    def __init__(self, root: str | Path | None = None) -> None:
        self._blobs: dict[Cid, bytes] = {}
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def put(self, value: Any) -> Cid:
        return self.put_bytes(canonical_bytes(value))

    def put_bytes(self, data: bytes) -> Cid:
        cid = cid_of_bytes(data)
        if cid not in self._blobs:
            self._blobs[cid] = data
            if self.root is not None:
                (self.root / cid.hex).write_bytes(data)
        return cid

    def get_bytes(self, cid: Cid) -> bytes:
        data = self._blobs.get(cid)
        if data is None and self.root is not None:
            path = self.root / cid.hex
            if path.exists():
                data = path.read_bytes()
        if data is None or cid_of_bytes(data) != cid:
            raise MissingArtifact(str(cid))
        return data

    def get(self, cid: Cid) -> Any:
        return decode(self.get_bytes(cid))

    def __contains__(self, cid: Cid) -> bool:
        try:
            self.get_bytes(cid)
        except MissingArtifact:
            return False
        return True

    def __len__(self) -> int:
        return len(self._blobs)

    @classmethod
    def open(cls, root: str | Path) -> ContentStore:
        store = cls(root)
        for path in sorted(store.root.iterdir()):
            data = path.read_bytes()
            store._blobs[cid_of_bytes(data)] = data
        return store

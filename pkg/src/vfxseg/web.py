"""Tag-search image ingestion with checksummed, resumable downloads.

The fetch logic is endpoint-agnostic: any client exposing
``search(tag, count) -> [PhotoRecord]`` and ``download(url) -> bytes``
can drive it. `FlickrClient` talks to the Flickr REST API (credential
from an environment variable, never serialized); `FixtureClient` replays
a recorded directory of responses so tests and dry runs work offline.
"""

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .core import VfxsegError
from .data import DatasetManifest, ManifestEntry, sha256_file

log = logging.getLogger(__name__)

CREDENTIAL_ENV = "VFXSEG_FLICKR_API_KEY"
FLICKR_ENDPOINT = "https://api.flickr.com/services/rest/"


class AuthFailure(VfxsegError):
    pass


class RateLimited(VfxsegError):
    pass


class PartialFetch(VfxsegError):
    def __init__(self, achieved: int, requested: int, manifest=None):
        super().__init__(f"fetched {achieved} of {requested} requested images")
        self.achieved = achieved
        self.requested = requested
        self.manifest = manifest


@dataclass
class WebQuery:
    tag: str
    count: int
    endpoint: str = FLICKR_ENDPOINT
    credential_env: str = CREDENTIAL_ENV

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("count must be positive")


@dataclass
class PhotoRecord:
    photo_id: str
    url: str


class FlickrClient:
    """Minimal tag-search client for the Flickr REST API."""

    def __init__(self, api_key: str | None = None, endpoint: str = FLICKR_ENDPOINT,
                 session=None, sleep=time.sleep, max_retries: int = 5):
        if api_key is None:
            api_key = os.environ.get(CREDENTIAL_ENV)
        if not api_key:
            raise AuthFailure(
                f"no API key; set the {CREDENTIAL_ENV} environment variable"
            )
        self.api_key = api_key
        self.endpoint = endpoint
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.sleep = sleep
        self.max_retries = max_retries

    def _get(self, url, **kwargs):
        delay = 1.0
        for attempt in range(self.max_retries):
            resp = self.session.get(url, timeout=60, **kwargs)
            if resp.status_code in (429, 503):
                log.warning("rate limited (%s), retry in %.0fs", resp.status_code, delay)
                self.sleep(delay)
                delay *= 2
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"{url}: HTTP {resp.status_code}")
            resp.raise_for_status()
            return resp
        raise RateLimited(f"{url}: still throttled after {self.max_retries} retries")

    def search(self, tag: str, count: int) -> list:
        records = []
        page = 1
        while len(records) < count:
            resp = self._get(
                self.endpoint,
                params={
                    "method": "flickr.photos.search",
                    "api_key": self.api_key,
                    "tags": tag,
                    "tag_mode": "all",
                    "media": "photos",
                    "per_page": min(500, count),
                    "page": page,
                    "extras": "url_o,url_l,url_c",
                    "sort": "relevance",
                    "format": "json",
                    "nojsoncallback": 1,
                },
            )
            data = resp.json()
            if data.get("stat") != "ok":
                if data.get("code") == 100:
                    raise AuthFailure(data.get("message", "invalid API key"))
                raise VfxsegError(f"search failed: {data.get('message')}")
            photos = data["photos"]["photo"]
            if not photos:
                break
            for p in photos:
                url = p.get("url_o") or p.get("url_l") or p.get("url_c")
                if url:
                    records.append(PhotoRecord(photo_id=str(p["id"]), url=url))
                if len(records) >= count:
                    break
            if page >= int(data["photos"].get("pages", page)):
                break
            page += 1
        return records

    def download(self, url: str) -> bytes:
        return self._get(url).content


class FixtureClient:
    """Replays a recorded fetch from a directory.

    Layout: fixture.json with {"photos": [{"id", "url", "file"}]} next to
    the referenced image files.
    """

    def __init__(self, fixture_dir):
        self.root = Path(fixture_dir)
        spec = json.loads((self.root / "fixture.json").read_text())
        self._photos = spec["photos"]
        self._by_url = {p["url"]: p["file"] for p in self._photos}

    def search(self, tag: str, count: int) -> list:
        return [
            PhotoRecord(photo_id=str(p["id"]), url=p["url"])
            for p in self._photos[:count]
        ]

    def download(self, url: str) -> bytes:
        try:
            return (self.root / self._by_url[url]).read_bytes()
        except KeyError as e:
            raise VfxsegError(f"fixture has no recording for {url}") from e


def web_fetch(query: WebQuery, out_dir, client=None, resume: bool = True) -> DatasetManifest:
    """Download up to query.count tag-matching images with checksums.

    Resumable (default): files already present whose checksum matches the
    previous manifest are kept; corrupt ones are re-downloaded. Raises
    PartialFetch (carrying the written manifest) when fewer than
    query.count images could be fetched.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if client is None:
        client = FlickrClient(endpoint=query.endpoint)

    manifest_path = out_dir / "manifest.json"
    known = {}
    if resume and manifest_path.exists():
        try:
            for e in DatasetManifest.load(manifest_path).entries:
                known[e.path] = e.sha256
        except Exception:  # stale or foreign manifest: refetch from scratch
            known = {}

    records = client.search(query.tag, query.count)
    entries = []
    for rec in records:
        suffix = Path(rec.url.split("?")[0]).suffix or ".jpg"
        rel = f"{rec.photo_id}{suffix}"
        dest = out_dir / rel
        if dest.exists() and known.get(rel) == sha256_file(dest):
            log.debug("keeping verified %s", rel)
        else:
            try:
                blob = client.download(rec.url)
            except (AuthFailure, RateLimited):
                raise
            except Exception as e:
                log.warning("download failed for %s: %s", rec.url, e)
                continue
            dest.write_bytes(blob)
        entries.append(
            ManifestEntry(path=rel, sha256=sha256_file(dest), tag=query.tag)
        )
    manifest = DatasetManifest(
        name=f"web-{query.tag.replace(' ', '_')}",
        role="domainB_samples",
        created=f"fetch(tag={query.tag!r},count={query.count})",
        entries=entries,
    )
    manifest.save(manifest_path)
    if len(entries) < query.count:
        raise PartialFetch(len(entries), query.count, manifest)
    return manifest

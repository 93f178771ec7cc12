"""Checksummed, resumable web ingestion (offline, against a fixture).

The fetch machinery is endpoint-agnostic: anything with search() and
download() can drive it. Here a recorded fixture stands in for the photo
API so the demo runs without network or credentials; point FlickrClient
at the real API by exporting VFXSEG_FLICKR_API_KEY and dropping the
`client=` argument.

Run:  python3 demos/05_web_ingestion.py
"""

import json
from pathlib import Path

import numpy as np

from vfxseg.core import save_image
from vfxseg.data import sha256_file
from vfxseg.web import FixtureClient, WebQuery, web_fetch

out_dir = Path(__file__).parent / "output" / "web"
fixture = out_dir / "fixture"
fixture.mkdir(parents=True, exist_ok=True)

# record a fake photo service: 8 tagged photos
rng = np.random.default_rng(11)
photos = []
for i in range(8):
    name = f"photo_{i}.png"
    save_image(rng.random((32, 32, 3)).astype(np.float32), fixture / name)
    photos.append({"id": 9000 + i,
                   "url": f"https://photos.example/{9000 + i}_o.png",
                   "file": name})
(fixture / "fixture.json").write_text(json.dumps({"photos": photos}))

query = WebQuery(tag="black background", count=8)
dest = out_dir / "downloads"
manifest = web_fetch(query, dest, client=FixtureClient(fixture))
print(f"fetched {len(manifest.entries)} images; manifest at {dest/'manifest.json'}")
print("every entry is checksummed:")
print(json.dumps(manifest.entries[0].to_json(), indent=2))

# resumability: corrupt one file, fetch again; only that file is rewritten
victim = dest / manifest.entries[0].path
victim.write_bytes(b"flipped bits")
manifest2 = web_fetch(query, dest, client=FixtureClient(fixture))
print(f"after corruption, refetch restored it: "
      f"{sha256_file(victim) == manifest2.entries[0].sha256}")
manifest2.verify()
print("manifest verifies clean")

"""Export torchvision's ImageNet VGG16 convolution weights to a metastyle archive.

    python tools/export_vgg16.py vgg16.msta

Needs torchvision and network access (or a cached checkpoint) for the weights.
"""
import json
import struct
import sys
import zlib

import numpy as np
import torchvision

CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28]


def main(path):
    model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)
    state = model.features.state_dict()
    tensors, chunks, offset = {}, [], 0
    for i in CONV_INDICES:
        for kind in ("weight", "bias"):
            arr = state[f"{i}.{kind}"].detach().cpu().numpy().astype("<f4")
            raw = np.ascontiguousarray(arr).tobytes()
            tensors[f"features.{i}.{kind}"] = {
                "dtype": "float32", "shape": list(arr.shape), "offset": offset, "length": len(raw)}
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": 1,
        "metadata": {"kind": "vgg16_features", "source": "torchvision IMAGENET1K_V1"},
        "tensors": tensors,
        "payload_length": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)


if __name__ == "__main__":
    main(sys.argv[1])

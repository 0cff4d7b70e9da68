"""Writes the tiny CLI fixtures: a 2-class network, hand-set weights and four
IDX images. Runs a numpy forward pass to confirm every image is classified as
its label."""

import pathlib
import struct

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent

CANONICAL = (
    "input 1 6 6\n"
    "classes 2\n"
    "conv 3 3 2 relu\n"
    "maxpool 2 2\n"
    "conv 1 1 2 linear\n"
    "gap\n"
    "softmax\n"
)

NET_TEXT = """# two-class toy network: bright blobs vs dark fields
input 1 6 6
classes 2
conv 3 3 2 relu
maxpool 2 2
conv 1 1 2 linear
gap
softmax
"""


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def layers():
    w1 = np.zeros((2, 1, 3, 3))
    w1[0] = 1.0 / 9.0
    w1[1] = -1.0 / 9.0
    b1 = np.array([0.0, 0.5])
    w2 = np.eye(2).reshape(2, 2, 1, 1)
    b2 = np.zeros(2)
    return [(w1, b1), (w2, b2)]


def images():
    imgs = np.zeros((4, 6, 6), dtype=np.uint8)
    imgs[0, 1:5, 1:5] = 255
    imgs[2, :, :] = 255
    imgs[3, 0, 0] = 200
    return imgs, np.array([0, 1, 0, 1], dtype=np.uint8)


def conv(x, w, b, pad):
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h, wd = x.shape[1], x.shape[2]
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for y in range(h):
            for z in range(wd):
                out[o, y, z] = np.sum(xp[:, y:y + kh, z:z + kw] * w[o]) + b[o]
    return out


def predict(img):
    (w1, b1), (w2, b2) = layers()
    a = np.maximum(conv(img[None] / 255.0, w1, b1, 1), 0)
    a = a.reshape(2, 3, 2, 3, 2).max(axis=(2, 4))
    z = conv(a, w2, b2, 0)
    return int(np.argmax(z.mean(axis=(1, 2))))


def main():
    (HERE / "tiny.net").write_text(NET_TEXT)

    out = bytearray(b"CLRW")
    out += struct.pack("<IQI", 1, fnv1a64(CANONICAL.encode()), 2)
    for w, b in layers():
        out += b"CONV" + struct.pack("<II4I", 8, 0, *w.shape)
        out += w.astype("<f8").tobytes() + b.astype("<f8").tobytes()
    (HERE / "tiny.clrw").write_bytes(bytes(out))

    imgs, labels = images()
    (HERE / "tiny-images.idx").write_bytes(struct.pack(">IIII", 0x803, 4, 6, 6) + imgs.tobytes())
    (HERE / "tiny-labels.idx").write_bytes(struct.pack(">II", 0x801, 4) + labels.tobytes())

    for img, label in zip(imgs, labels):
        assert predict(img) == label, (predict(img), label)


if __name__ == "__main__":
    main()

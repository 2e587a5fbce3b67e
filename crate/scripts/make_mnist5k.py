"""Build the bundled 5k-digit MNIST subset as gzipped IDX files.

Source: the 5000-sample MNIST subset (500 digits per class) shipped inside
the mlxtend wheel as mlxtend/data/data/mnist_5k.csv.gz.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 scripts/make_mnist5k.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    images = table[:, :784].reshape(-1, 28, 28)
    labels = table[:, 784].astype(np.int64)
    order = np.random.RandomState(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    split = 4000
    write_idx_images(f"{out_dir}/train-images-idx3-ubyte.gz", images[:split])
    write_idx_labels(f"{out_dir}/train-labels-idx1-ubyte.gz", labels[:split])
    write_idx_images(f"{out_dir}/t10k-images-idx3-ubyte.gz", images[split:])
    write_idx_labels(f"{out_dir}/t10k-labels-idx1-ubyte.gz", labels[split:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

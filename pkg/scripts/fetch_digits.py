"""Download MNIST and USPS and convert both to IDX files.

Writes into the target directory (default: $GRAPHDA_DATA or ./data):
    train-images-idx3-ubyte       MNIST train images (28x28)
    train-labels-idx1-ubyte       MNIST train labels
    usps-train-images-idx3-ubyte  USPS train images (16x16)
    usps-train-labels-idx1-ubyte  USPS train labels
    manifest.txt                  paths and sha256 checksums

MNIST ships as gzipped IDX; USPS is fetched in bzipped libsvm format and
converted. Untested plumbing: requires outbound network access.

Usage: python3 scripts/fetch_digits.py [--out DIR]
"""

import argparse
import bz2
import gzip
import os

import numpy as np
import requests

from graphda import data

MNIST_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist"
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
USPS_URL = ("https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets"
            "/multiclass/usps.bz2")


def download(url, path):
    print(f"fetching {url}")
    response = requests.get(url, timeout=120)
    response.raise_for_status()
    with open(path, "wb") as f:
        f.write(response.content)


def fetch_mnist(out_dir):
    for name in MNIST_FILES:
        target = os.path.join(out_dir, name)
        if os.path.exists(target):
            print(f"{target} already present, skipping")
            continue
        gz_path = target + ".gz"
        download(f"{MNIST_BASE}/{name}.gz", gz_path)
        with gzip.open(gz_path, "rb") as f:
            blob = f.read()
        with open(target, "wb") as f:
            f.write(blob)
        os.remove(gz_path)


def parse_libsvm_digits(text, side=16):
    """(N, side, side) images in [0,1] and labels from libsvm lines whose
    features are pixel values in [-1, 1] and labels are 1..10 (10 = digit 0)."""
    images, labels = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        labels.append(int(float(parts[0])) % 10)
        pixels = np.zeros(side * side)
        for item in parts[1:]:
            idx, value = item.split(":")
            pixels[int(idx) - 1] = float(value)
        images.append((pixels.reshape(side, side) + 1.0) / 2.0)
    return np.array(images), np.array(labels)


def fetch_usps(out_dir):
    img_path = os.path.join(out_dir, "usps-train-images-idx3-ubyte")
    lab_path = os.path.join(out_dir, "usps-train-labels-idx1-ubyte")
    if os.path.exists(img_path) and os.path.exists(lab_path):
        print(f"{img_path} already present, skipping")
        return
    bz_path = os.path.join(out_dir, "usps.bz2")
    download(USPS_URL, bz_path)
    text = bz2.decompress(open(bz_path, "rb").read()).decode()
    images, labels = parse_libsvm_digits(text)
    data.save_idx_images(img_path, images)
    data.save_idx_labels(lab_path, labels)
    os.remove(bz_path)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.environ.get("GRAPHDA_DATA", "data"))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    fetch_mnist(args.out)
    fetch_usps(args.out)
    files = {
        "mnist_images": os.path.join(args.out, "train-images-idx3-ubyte"),
        "mnist_labels": os.path.join(args.out, "train-labels-idx1-ubyte"),
        "usps_images": os.path.join(args.out, "usps-train-images-idx3-ubyte"),
        "usps_labels": os.path.join(args.out, "usps-train-labels-idx1-ubyte"),
    }
    data.write_manifest(os.path.join(args.out, "manifest.txt"), "digits", files)
    print(f"wrote {os.path.join(args.out, 'manifest.txt')}")


if __name__ == "__main__":
    main()

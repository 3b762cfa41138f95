"""
Map the published 158-point measurement set into the package's CSV schema.

The dataset (DOI 10.21227/f28n-6292) is not redistributed here. Download it,
then edit the configuration below to match the column names of the file you
received. The output has the header ``point_id,x,y,z,rss_0..rss_3`` and is
what ``vlp-calib simulate --dataset`` and ``VLP_DATASET_PATH`` expect.
"""

import logging
import sys

from vlp_calib.services.dataset_service import map_dataset_columns, parse_measurements

# Configuration
SOURCE_PATH = "data/native_measurements.csv"  # Update this to your downloaded file
TARGET_PATH = "data/measurements.csv"
DELIMITER = ","
LENGTH_SCALE = 1.0  # native length unit -> meters (0.001 for millimetres)

# Native column name for each schema field; point_id and z are optional
COLUMN_MAP = {
    "x": "x",
    "y": "y",
}
# Native RSS columns, in the LED order of resources/experimental.yaml
RSS_SOURCES = ["rss_led1", "rss_led2", "rss_led3", "rss_led4"]

logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")

count = map_dataset_columns(SOURCE_PATH, TARGET_PATH, COLUMN_MAP, RSS_SOURCES, scale=LENGTH_SCALE, delimiter=DELIMITER)
records = parse_measurements(TARGET_PATH)

print(f"Wrote {count} rows to {TARGET_PATH}")
if len(records) != 158:
    print(f"⚠️  Expected 158 measurement points, found {len(records)}; check COLUMN_MAP and RSS_SOURCES")
else:
    print("✓ Dataset ready. Point VLP_DATASET_PATH at it to enable the replay tests.")

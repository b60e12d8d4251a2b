"""Download the public case/death and policy CSVs into a data directory.

Usage: python scripts/fetch_data.py [DATA_DIR]   (default: ./data)

Then point the CLI at it with --data-dir or SIMLR_DATA_DIR. This is the
only part of the project that touches the network; it is not tested.
"""

import sys
import urllib.request
from pathlib import Path

JHU = "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/csse_covid_19_data/csse_covid_19_time_series/"
SOURCES = {
    "time_series_covid19_confirmed_global.csv": JHU + "time_series_covid19_confirmed_global.csv",
    "time_series_covid19_deaths_global.csv": JHU + "time_series_covid19_deaths_global.csv",
    "time_series_covid19_confirmed_US.csv": JHU + "time_series_covid19_confirmed_US.csv",
    "time_series_covid19_deaths_US.csv": JHU + "time_series_covid19_deaths_US.csv",
    "OxCGRT_latest.csv": "https://raw.githubusercontent.com/OxCGRT/covid-policy-tracker/master/data/OxCGRT_latest.csv",
}


def main(argv):
    target = Path(argv[1] if len(argv) > 1 else "data")
    target.mkdir(parents=True, exist_ok=True)
    for name, url in SOURCES.items():
        dest = target / name
        print(f"{url} -> {dest}")
        tmp = dest.with_suffix(".part")
        with urllib.request.urlopen(url, timeout=120) as resp, open(tmp, "wb") as fh:
            while chunk := resp.read(1 << 20):
                fh.write(chunk)
        tmp.replace(dest)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

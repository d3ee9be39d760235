import os.path
import sys

from setuptools import find_packages, setup

DISTNAME = 'indexnet'
DESCRIPTION = "IndexNet: timestamp and channel embeddings for multivariate time-series forecasting"
MAINTAINER = 'XXX'
MAINTAINER_EMAIL = 'XXX'
URL = 'XXX'
LICENSE = 'MIT License'
DOWNLOAD_URL = ''
VERSION = '0.1.dev0'


if __name__ == '__main__':
    local_path = os.path.dirname(os.path.abspath(sys.argv[0]))

    os.chdir(local_path)
    sys.path.insert(0, local_path)

    setup(
        packages=find_packages(),
        name=DISTNAME,
        maintainer=MAINTAINER,
        include_package_data=True,
        maintainer_email=MAINTAINER_EMAIL,
        description=DESCRIPTION,
        license=LICENSE,
        url=URL,
        version=VERSION,
        download_url=DOWNLOAD_URL,
        zip_safe=False,  # the package can run out of an .egg file
        python_requires='>=3.8',
        install_requires=['numpy', 'torch', 'sacred>=0.8', 'joblib>=1.3', 'pandas>=2.0', 'scikit-learn'],
        extras_require={'analysis': ['matplotlib', 'seaborn'], 'test': ['pytest']},
        entry_points={'console_scripts': ['indexnet=indexnet.cli:main']},
    )

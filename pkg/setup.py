import os

from setuptools import setup, Extension, find_packages

ext_modules = [
    Extension("ctal.text.merges", ["ctal/text/merges.py"]),
    Extension("ctal.finetune.metrics", ["ctal/finetune/metrics.py"]),
]

for e in ext_modules:
    e.cython_directives = {'language_level': "3", 'annotation_typing': False}

version = os.environ.get('CTAL_VERSION', 'v0.1.0').split("/")[-1]  # i.e.: v0.1.0

if 'CTAL_NO_CYTHON' in os.environ:
    cython_params = {}
else:
    try:
        from Cython.Build import build_ext, cythonize
        cython_params = {
            'ext_modules': cythonize(ext_modules),
            'cmdclass': {'build_ext': build_ext},
        }
    except ImportError:
        cython_params = {}

setup(
    name='ctal',
    packages=find_packages(exclude=['examples', 'examples.*']),
    version=version.lstrip('v'),
    license='gpl-3.0',
    description='Cross-modal Transformer for audio and language: pre-training, fine-tuning and evaluation at desk scale',
    keywords=['speech', 'multimodal', 'transformer', 'pre-training', 'emotion recognition'],
    install_requires=[
        'numpy',
        'scipy',
        'librosa',
        'pandas',
        'matplotlib',
        'tqdm',
        'Cython',
    ],
    extras_require={
        'test': ['pytest', 'scikit-learn', 'torch'],
    },
    entry_points={
        'console_scripts': ['ctal=ctal.cli.main:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3.8',
    ],
    **cython_params
)

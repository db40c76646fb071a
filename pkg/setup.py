from setuptools import setup, find_packages

with open("README.md") as flines:
    readme = flines.read()

with open("requirements.txt") as flines:
    requirements = [line.strip() for line in flines if line.strip()]

setup(
    name='supportnetworks',
    version='0.1dev',
    description='Training dynamics of GD and SGD on the irrelevant inputs of linear, diagonal and ReLU networks',
    long_description=readme,
    setup_requires=['pytest_runner'],
    tests_require=['pytest'],
    install_requires=requirements,
    packages=find_packages("src", exclude=('tests', 'examples', 'htmlcov')),
    package_dir={'': 'src'},
    entry_points={'console_scripts': ['supportnetworks=supportnetworks.cli:main']}
)

import setuptools

with open("src/lciclv/__init__.py", "rt") as f:
    for line in f.readlines():
        if line.startswith("__version__"):
            __version__ = line.split("=")[1].strip(" \n\"")

setuptools.setup(name='lc-iclv',
                 version=__version__,
                 description='latent class integrated choice and latent variable models by maximum simulated likelihood',
                 long_description=open('README.md').read(),
                 long_description_content_type='text/markdown',
                 package_dir={"": "src"},
                 packages=setuptools.find_packages(where="src"),
                 license='MIT License',
                 zip_safe=False,
                 keywords='discrete choice, latent class, ICLV, mixed logit, simulated likelihood',

                 classifiers=[
                 ],
                 python_requires='>=3.9',
                 install_requires=[
                     "numpy",
                     "scipy>=1.11",
                     "pandas",
                     "pydantic",
                     "PyYAML",
                     "scikit-learn",
                 ],
                 extras_require={
                     "test": ["pytest"],
                 },
                 entry_points={
                     "console_scripts": ["lciclv = lciclv.cli:main"],
                 },
                 )

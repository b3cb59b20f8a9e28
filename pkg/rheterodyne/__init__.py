# rheterodyne: heterodyne current synthesis and filtered-autocorrelation spectra
__version__ = "1.0.0"

from rheterodyne.cli import run

run()

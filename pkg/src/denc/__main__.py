from denc.cli import main

main()

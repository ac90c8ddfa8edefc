from adlm.cli import main

main()

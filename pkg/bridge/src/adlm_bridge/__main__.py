from adlm_bridge.cli import main

main()

# Wi-Fi FTM sensor-aided learning workbench

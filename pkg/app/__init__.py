# FedSelectAPI - Client Selection and Resource Allocation for Wireless Federated Learning

"""Writes the bundled taxonomy, check registry and simulated command table."""
import json, os

ROOT = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", ".."))
OUT = os.path.join(ROOT, "crates/core/assets")

def gpu_list(n):
    return "".join(f"GPU {i}: NVIDIA H100 80GB HBM3 (UUID: GPU-{i:08x}-7c1d-4e2a)\n" for i in range(n))

MAIN = {
 "GPU": "Incidents related to GPU hardware.",
 "System Software": "Problems with system-level software such as the GPU driver, CUDA and infrastructure software.",
 "Interconnect & Networking": "Incidents related to the network and high-speed interconnects.",
 "Framework & Library": "Incidents related to AI frameworks and libraries.",
 "User Application": "Incidents caused by the user's application: code errors, configuration conflicts and misuse.",
 "Other": "Incidents that do not fall into the other categories.",
}

# (id, path, argv, rule, duration, healthy(exit, stdout), faults[(tag, exit, stdout)])
INTERNAL = [
 ("gpu_config_check", "GPU", ["nvidia-smi","--query-gpu=index,persistence_mode,compute_mode","--format=csv,noheader"],
  {"StdoutRegex": r"(?m)^7, Enabled, Default$"}, 1.2,
  (0, "".join(f"{i}, Enabled, Default\n" for i in range(8))),
  [("gpu_missing", 0, "".join(f"{i}, Enabled, Default\n" for i in range(7)))]),
 ("gpu_nvlink_check", "GPU", ["nvidia-smi","nvlink","-c"],
  {"StdoutRegex": r"GPU 1:[^\n]*\n\s*Link 0, P2P is supported: true"}, 0.9,
  (0, "".join(f"GPU {i}: NVIDIA H100 80GB HBM3\n\t Link 0, P2P is supported: true\n" for i in range(8))),
  [("nvlink_inactive", 0, "GPU 0: NVIDIA H100 80GB HBM3\n\t Link 0, P2P is supported: true\nGPU 1: NVIDIA H100 80GB HBM3\n\t Link 0: inactive\n")]),
 ("gpu_hostdev_bandwidth_check", "GPU", ["nvbandwidth","-t","host_to_device_memcpy_ce"],
  {"StdoutRegex": r"SUM host_to_device_memcpy_ce\s+([1-9]\d{3}|[3-9]\d{2})\."}, 14.0,
  (0, "Running host_to_device_memcpy_ce.\nSUM host_to_device_memcpy_ce 1456.22\n"),
  [("gpu_missing", 0, "Running host_to_device_memcpy_ce.\nSUM host_to_device_memcpy_ce 187.40\n")]),
 ("gpu_execution_check", "GPU", ["dcgmi","diag","-r","1"],
  {"StdoutRegex": r"Overall Result\s*:\s*Pass"}, 35.0,
  (0, "Deployment\n  Denylist : Pass\n  Software : Pass\nOverall Result : Pass\n"),
  [("ecc_uncorrectable", 226, "Deployment\n  Software : Fail - uncorrectable ECC errors present\nOverall Result : Fail\n"),
   ("xid_48", 226, "Deployment\n  Software : Fail - Xid 48 (double bit ECC error) logged\nOverall Result : Fail\n"),
   ("xid_79", 226, "Error: GPU 0000:3b:00.0 is lost\nOverall Result : Fail\n"),
   ("gpu_missing", 226, "Error: expected 8 GPUs, found 7\nOverall Result : Fail\n")]),
 ("cuda_execution_check", "System Software", ["deviceQuery"],
  {"ExitZeroAndRegex": r"Result = PASS"}, 2.5,
  (0, "Detected 8 CUDA Capable device(s)\nCUDA Driver Version / Runtime Version 12.2 / 12.2\nResult = PASS\n"),
  [("cuda_version_mismatch", 1, "cudaGetDeviceCount returned 35\n-> CUDA driver version is insufficient for CUDA runtime version\nResult = FAIL\n"),
   ("driver_version_mismatch", 1, "cudaGetDeviceCount returned 803\n-> system has unsupported display driver / cuda driver combination\nResult = FAIL\n")]),
 ("gpu_driver_check", "System Software", ["nvidia-smi","--query-gpu=driver_version","--format=csv,noheader"],
  {"StdoutRegex": r"^535\."}, 0.6,
  (0, "535.161.08\n"), [("driver_version_mismatch", 0, "525.60.13\n")]),
 ("dmesg_check", "System Software", ["dmesg","--level=err,crit,alert,emerg"],
  {"StdoutRegex": r"\A\s*\z"}, 0.4,
  (0, ""),
  [("kernel_soft_lockup", 0, "[81234.551] watchdog: BUG: soft lockup - CPU#17 stuck for 23s! [python:48211]\n"),
   ("xid_48", 0, "[1201.33] NVRM: Xid (PCI:0000:3b:00): 48, pid=20911, DBE (double bit error) ECC error\n"),
   ("xid_79", 0, "[1201.33] NVRM: Xid (PCI:0000:3b:00): 79, pid=20911, GPU has fallen off the bus.\n")]),
 ("system_config_check", "System Software", ["sysctl","vm.max_map_count","kernel.numa_balancing"],
  {"StdoutRegex": r"kernel.numa_balancing = 0"}, 0.2,
  (0, "vm.max_map_count = 1048576\nkernel.numa_balancing = 0\n"), []),
 ("collective_comm_check", "Interconnect & Networking", ["all_reduce_perf","-b","8","-e","128M","-f","2","-g","8"],
  {"ExitZeroAndRegex": r"Avg bus bandwidth\s*:\s*(1\d\d|[5-9]\d)\."}, 48.0,
  (0, "# Out of bounds values : 0 OK\n# Avg bus bandwidth    : 182.41\n"),
  [("nvlink_inactive", 0, "# Out of bounds values : 0 OK\n# Avg bus bandwidth    : 11.02\n"),
   ("nccl_connect_refused", 1, "include/socket.h:406 NCCL WARN Connect to 10.0.4.17<43917> failed : Connection refused\n"),
   ("ib_link_down", 1, "NCCL WARN NET/IB : Got completion from peer 10.0.4.18 with error 12\n"),
   ("nccl_timeout", 1, "Watchdog caught collective operation timeout: WorkNCCL(SeqNum=1, OpType=ALLREDUCE) ran for 1800000 milliseconds\n")]),
 ("nic_config_check", "Interconnect & Networking", ["ibdev2netdev"],
  {"StdoutRegex": r"mlx5_0 port 1 ==> ib0 \(Up\)"}, 0.3,
  (0, "mlx5_0 port 1 ==> ib0 (Up)\nmlx5_1 port 1 ==> ib1 (Up)\n"),
  [("ib_link_down", 0, "mlx5_0 port 1 ==> ib0 (Down)\nmlx5_1 port 1 ==> ib1 (Up)\n"),
   ("ib_hca_misconfig", 0, "mlx5_0 port 1 ==> eth2 (Up)\nmlx5_1 port 1 ==> ib1 (Up)\n")]),
 ("nvlink_pcie_check", "Interconnect & Networking", ["nvidia-smi","topo","-m"],
  {"StdoutRegex": r"GPU0\s+X\s+NV18"}, 0.5,
  (0, "\tGPU0\tGPU1\nGPU0\t X \tNV18\nGPU1\tNV18\t X \n"),
  [("nvlink_inactive", 0, "\tGPU0\tGPU1\nGPU0\t X \tPHB\nGPU1\tPHB\t X \n")]),
 ("rdma_perftest", "Interconnect & Networking", ["ib_write_bw","--report_gbits","-d","mlx5_0"],
  {"ExitZeroAndRegex": r"BW average\[Gb/sec\]\s*:\s*(3\d\d|[1-2]\d\d)\."}, 12.0,
  (0, " #bytes     #iterations    BW peak[Gb/sec]    BW average[Gb/sec] : 391.27\n"),
  [("ib_link_down", 1, "Couldn't connect to 10.0.4.18:18515\nUnable to init the socket connection\n"),
   ("ib_hca_misconfig", 0, " #bytes     #iterations    BW peak[Gb/sec]    BW average[Gb/sec] : 38.12\n")]),
 ("e2e_training_check", "Framework & Library", ["infradiag-probe","e2e-train","--steps","20"],
  "ExitZero", 95.0, (0, "step 20/20 loss=2.913 OK\n"),
  [("torch_allocator", 1, "RuntimeError: CUDA error: CUBLAS_STATUS_ALLOC_FAILED when calling cublasCreate(handle)\n"),
   ("deepspeed_incompat", 1, "ImportError: deepspeed 0.9.5 requires torch<2.1\n"),
   ("ckpt_corrupt", 1, "RuntimeError: PytorchStreamReader failed reading zip archive: failed finding central directory\n")]),
 ("framework_stress_check", "Framework & Library", ["infradiag-probe","stress","--minutes","1"],
  "ExitZero", 60.0, (0, "stress: 1200 iterations, 0 failures\n"),
  [("torch_allocator", 1, "stress: iteration 311: CUDA caching allocator returned invalid block\n")]),
 ("ckpt_load_check", "Framework & Library", ["infradiag-probe","ckpt-load"],
  "ExitZero", 18.0, (0, "loaded 64 shards, 0 errors\n"),
  [("ckpt_corrupt", 1, "shard 17: checksum mismatch\n")]),
 ("version_compat_check", "Framework & Library", ["infradiag-probe","version-compat"],
  "ExitZero", 1.5, (0, "torch 2.2.1+cu122, deepspeed 0.14.0, nccl 2.19.3: compatible\n"),
  [("deepspeed_incompat", 1, "deepspeed 0.9.5 is incompatible with torch 2.2.1\n"),
   ("cuda_version_mismatch", 1, "torch built for cu122 but host runtime is 11.8\n")]),
 ("user_e2e_check", "User Application", ["infradiag-probe","e2e-train","--user-config"],
  "ExitZero", 110.0, (0, "user job reproduced: step 20/20 OK\n"),
  [("user_bad_args", 2, "error: unrecognized arguments: --nproc-per-node=16 (node has 8 GPUs)\n"),
   ("user_oom", 1, "torch.cuda.OutOfMemoryError: CUDA out of memory. Tried to allocate 20.00 GiB\n"),
   ("user_quota", 1, "OSError: [Errno 122] Disk quota exceeded: '/scratch/ckpt/step_400'\n")]),
]

LEAVES = [
 ("GPU.MEMORY.ECC Error", "Uncorrectable ECC errors in GPU device memory.",
  "gpu_ecc_check", ["nvidia-smi","-q","-d","ECC"], {"StdoutRegex": r"DRAM Uncorrectable\s*:\s*0\b"}, 0.8,
  (0, "ECC Mode\n    Current : Enabled\nECC Errors\n    Volatile\n        DRAM Correctable : 0\n        DRAM Uncorrectable : 0\n"),
  [("ecc_uncorrectable", 0, "ECC Mode\n    Current : Enabled\nECC Errors\n    Volatile\n        DRAM Correctable : 0\n        DRAM Uncorrectable : 3\n")]),
 ("GPU.MEMORY.Page Retirement", "Retired or pending-retirement GPU memory pages.",
  "gpu_page_retirement_check", ["nvidia-smi","-q","-d","PAGE_RETIREMENT"], {"StdoutRegex": r"Pending Page Blacklist\s*:\s*No"}, 0.7,
  (0, "Retired Pages\n    Double Bit ECC : 0\n    Pending Page Blacklist : No\n"),
  [("page_retirement_pending", 0, "Retired Pages\n    Double Bit ECC : 2\n    Pending Page Blacklist : Yes\n"),
   ("ecc_uncorrectable", 0, "Retired Pages\n    Double Bit ECC : 3\n    Pending Page Blacklist : Yes\n")]),
 ("GPU.MEMORY.infoROM_Corruption", "Corrupted GPU infoROM image.",
  "gpu_inforom_check", ["nvidia-smi","-q","-d","INFOROM"], {"StdoutRegex": r"Image Version\s*:\s*G\d+"}, 0.6,
  (0, "Inforom Version\n    Image Version : G520.0200.00.05\n    OEM Object : 2.1\n"),
  [("inforom_corrupt", 0, "WARNING: infoROM is corrupted at gpu 0000:3B:00.0\n")]),
 ("GPU.MEMORY.Memory_Diag_Failure", "GPU memory fails the extended diagnostic.",
  "gpu_memory_diag_check", ["dcgmi","diag","-r","3"], {"StdoutRegex": r"GPU Memory\s*:\s*Pass"}, 240.0,
  (0, "Hardware\n  GPU Memory : Pass\n  Diagnostic : Pass\n"),
  [("memory_diag_fail", 226, "Hardware\n  GPU Memory : Fail - memory test failed at address 0x1f4a00000\n"),
   ("inforom_corrupt", 226, "Hardware\n  GPU Memory : Fail - unable to read infoROM ECC configuration\n"),
   ("ecc_uncorrectable", 226, "Hardware\n  GPU Memory : Fail - uncorrectable ECC errors present\n"),
   ("page_retirement_pending", 226, "Hardware\n  GPU Memory : Fail - pending page retirement, reset required\n")]),
 ("GPU.XID.Xid 48", "Xid 48: double-bit ECC error reported by the driver.",
  "gpu_xid48_check", ["journalctl","-k","--grep","Xid.*: 48,"], {"StdoutRegex": r"^-- No entries --"}, 0.9,
  (0, "-- No entries --\n"),
  [("xid_48", 0, "kernel: NVRM: Xid (PCI:0000:3b:00): 48, pid=20911, DBE (double bit error) ECC error\n")]),
 ("GPU.XID.Xid 79", "Xid 79: the GPU has fallen off the bus.",
  "gpu_xid79_check", ["journalctl","-k","--grep","Xid.*: 79,"], {"StdoutRegex": r"^-- No entries --"}, 0.9,
  (0, "-- No entries --\n"),
  [("xid_79", 0, "kernel: NVRM: Xid (PCI:0000:3b:00): 79, pid=20911, GPU has fallen off the bus.\n")]),
 ("GPU.EXECUTION.GPU_Missing", "Fewer GPUs visible than the SKU provides.",
  "gpu_count_check", ["nvidia-smi","-L"], {"StdoutRegex": r"(?m)^GPU 7:"}, 0.5,
  (0, gpu_list(8)), [("gpu_missing", 0, gpu_list(7))]),
 ("System Software.CUDA.Illegal_Mem_Access", "Kernels performing illegal device memory accesses.",
  "cuda_memcheck_check", ["compute-sanitizer","--tool","memcheck","/opt/infradiag/probes/cuda_smoke"], {"StdoutRegex": r"ERROR SUMMARY: 0 errors"}, 6.0,
  (0, "========= COMPUTE-SANITIZER\n========= ERROR SUMMARY: 0 errors\n"),
  [("cuda_illegal_access", 1, "========= Invalid __global__ read of size 4 bytes\n=========     at probe_kernel+0x1b0\n========= ERROR SUMMARY: 1 error\n")]),
 ("System Software.CUDA.CUDA_Runtime_Error", "CUDA runtime calls failing on the node.",
  "cuda_runtime_check", ["infradiag-probe","cuda-smoke"], "ExitZero", 3.0,
  (0, "cuda-smoke: 8/8 devices OK\n"),
  [("cuda_runtime_error", 1, "cuda-smoke: cudaMalloc failed: CUDA error: unspecified launch failure\n"),
   ("cuda_illegal_access", 1, "cuda-smoke: CUDA error: an illegal memory access was encountered\n")]),
 ("System Software.CUDA.Host_VM_Version_Mismatch", "CUDA version inside the VM does not match the host stack.",
  "cuda_version_check", ["nvcc","--version"], {"StdoutRegex": r"release 12\.2"}, 0.3,
  (0, "nvcc: NVIDIA (R) Cuda compiler driver\nCuda compilation tools, release 12.2, V12.2.140\n"),
  [("cuda_version_mismatch", 0, "nvcc: NVIDIA (R) Cuda compiler driver\nCuda compilation tools, release 11.8, V11.8.89\n")]),
 ("System Software.DRIVER.Driver_Version_Mismatch", "Loaded GPU driver differs from the supported version.",
  "driver_module_check", ["modinfo","-F","version","nvidia"], {"StdoutRegex": r"^535\."}, 0.2,
  (0, "535.161.08\n"), [("driver_version_mismatch", 0, "525.60.13\n")]),
 ("System Software.KERNEL.Soft_Lockup", "Host kernel soft lockups stalling training processes.",
  "kernel_lockup_check", ["journalctl","-k","--grep","soft lockup"], {"StdoutRegex": r"^-- No entries --"}, 0.8,
  (0, "-- No entries --\n"),
  [("kernel_soft_lockup", 0, "kernel: watchdog: BUG: soft lockup - CPU#17 stuck for 23s! [python:48211]\n")]),
 ("Interconnect & Networking.NCCL.NCCL_Error", "NCCL fails to establish or use peer connections.",
  "nccl_connectivity_check", ["all_reduce_perf","-b","1M","-e","1M","-g","8","-c","1"], {"ExitZeroAndRegex": r"Out of bounds values : 0 OK"}, 9.0,
  (0, "# Out of bounds values : 0 OK\n# Avg bus bandwidth    : 176.90\n"),
  [("nccl_connect_refused", 1, "include/socket.h:406 NCCL WARN Connect to 10.0.4.17<43917> failed : Connection refused\n"),
   ("nvlink_inactive", 1, "transport/p2p.cc:287 NCCL WARN Cuda failure 'peer access is not supported between these two devices'\ninclude/socket.h:406 NCCL WARN Connect to 10.0.4.17<43917> failed : Connection refused\n"),
   ("ib_link_down", 1, "NCCL WARN NET/IB : Got completion from peer 10.0.4.18 with error 12\n")]),
 ("Interconnect & Networking.NCCL.NCCL_Timeout", "Collectives hang until the NCCL watchdog fires.",
  "nccl_timeout_check", ["infradiag-probe","nccl-watchdog"], "ExitZero", 30.0,
  (0, "nccl-watchdog: 50 collectives completed, max latency 3.1 ms\n"),
  [("nccl_timeout", 1, "nccl-watchdog: collective 7 (ALLREDUCE) exceeded 30000 ms\n")]),
 ("Interconnect & Networking.NVLink.NVLink_Failure", "Inactive or degraded NVLink links between GPUs.",
  "nvlink_status_check", ["nvidia-smi","nvlink","-s"], {"StdoutRegex": r"GPU 1:[^\n]*\n\s*Link 0: [0-9.]+ GB/s"}, 0.7,
  (0, "".join(f"GPU {i}: NVIDIA H100 80GB HBM3 (UUID: GPU-{i:08x})\n\t Link 0: 26.562 GB/s\n" for i in range(8))),
  [("nvlink_inactive", 0, "GPU 0: NVIDIA H100 80GB HBM3 (UUID: GPU-00000000)\n\t Link 0: 26.562 GB/s\nGPU 1: NVIDIA H100 80GB HBM3 (UUID: GPU-00000001)\n\t Link 0: <inactive>\n\t Link 1: <inactive>\n")]),
 ("Interconnect & Networking.InfiniBand.IB_Link_Down", "InfiniBand port down or flapping.",
  "ib_port_state_check", ["ibstat","mlx5_0"], {"StdoutRegex": r"State: Active"}, 0.3,
  (0, "CA 'mlx5_0'\n\tPort 1:\n\t\tState: Active\n\t\tPhysical state: LinkUp\n"),
  [("ib_link_down", 0, "CA 'mlx5_0'\n\tPort 1:\n\t\tState: Down\n\t\tPhysical state: Polling\n")]),
 ("Interconnect & Networking.InfiniBand.HCA_Misconfig", "HCA configured with the wrong link layer or firmware settings.",
  "ib_link_layer_check", ["ibv_devinfo","-d","mlx5_0"], {"StdoutRegex": r"link_layer:\s+InfiniBand"}, 0.4,
  (0, "hca_id: mlx5_0\n\tport: 1\n\t\tstate: PORT_ACTIVE (4)\n\t\tlink_layer: InfiniBand\n"),
  [("ib_hca_misconfig", 0, "hca_id: mlx5_0\n\tport: 1\n\t\tstate: PORT_ACTIVE (4)\n\t\tlink_layer: Ethernet\n")]),
 ("Framework & Library.PyTorch.CUDA_Allocator_Error", "PyTorch CUDA caching allocator failures.",
  "torch_alloc_check", ["infradiag-probe","torch-alloc"], "ExitZero", 4.0,
  (0, "torch-alloc: 1000 alloc/free cycles OK\n"),
  [("torch_allocator", 1, "torch-alloc: CUBLAS_STATUS_ALLOC_FAILED after 12 cycles\n")]),
 ("Framework & Library.Checkpoint.Checkpoint_Corruption", "Checkpoint shards unreadable or inconsistent.",
  "ckpt_integrity_check", ["infradiag-probe","ckpt-load","--verify-shards"], "ExitZero", 22.0,
  (0, "verified 64 shards\n"), [("ckpt_corrupt", 1, "shard 17: checksum mismatch (expected 9f12, got 0000)\n")]),
 ("Framework & Library.DeepSpeed.Version_Incompatibility", "DeepSpeed version incompatible with the installed PyTorch.",
  "deepspeed_version_check", ["infradiag-probe","pkg-version","deepspeed"], {"StdoutRegex": r"deepspeed==0\.14\."}, 0.5,
  (0, "deepspeed==0.14.0\n"), [("deepspeed_incompat", 0, "deepspeed==0.9.5\n")]),
 ("User Application.Config.Bad_Launch_Args", "Job launched with arguments that do not fit the allocation.",
  "launch_args_check", ["infradiag-probe","launch-args"], "ExitZero", 0.4,
  (0, "launch-args: 8 processes per node, 8 GPUs per node: consistent\n"),
  [("user_bad_args", 2, "launch-args: --nproc-per-node=16 exceeds 8 visible GPUs\n")]),
 ("User Application.Code.OOM_Batch_Size", "Model and batch size exceed device memory.",
  "mem_budget_check", ["infradiag-probe","mem-budget"], "ExitZero", 2.0,
  (0, "mem-budget: peak 61.2 GiB of 80 GiB\n"),
  [("user_oom", 1, "mem-budget: peak 97.4 GiB exceeds 80 GiB device memory\n")]),
 ("User Application.Storage.Quota_Exceeded", "Job writes exceed the user's storage quota.",
  "scratch_quota_check", ["df","-h","/scratch"], {"StdoutRegex": r" ([0-8]?\d|9[0-4])% /scratch"}, 0.2,
  (0, "Filesystem      Size  Used Avail Use% Mounted on\nscratchfs        20T  8.4T   12T  42% /scratch\n"),
  [("user_quota", 0, "Filesystem      Size  Used Avail Use% Mounted on\nscratchfs        20T   20T     0 100% /scratch\n")]),
 ("Other.Platform.Scheduler_Failure", "Cluster scheduler unable to place or track the job.",
  "scheduler_status_check", ["infradiag-probe","scheduler-status"], {"StdoutRegex": r"state: healthy"}, 1.0,
  (0, "scheduler: state: healthy, queue depth 12\n"),
  [("scheduler_down", 0, "scheduler: state: unreachable (last heartbeat 14m ago)\n")]),
 ("Other.Platform.Storage_Mount_Failure", "Shared storage mount missing on the node.",
  "shared_mount_check", ["findmnt","/mnt/shared"], "ExitZero", 0.2,
  (0, "TARGET      SOURCE             FSTYPE OPTIONS\n/mnt/shared blobfuse2:shared    fuse   rw,nosuid\n"),
  [("storage_mount_lost", 1, "")]),
]

SUBS = {
 "GPU.MEMORY": "GPU device-memory faults.",
 "GPU.XID": "Faults reported as NVIDIA Xid events.",
 "GPU.EXECUTION": "GPUs missing or failing to execute work.",
 "System Software.CUDA": "CUDA runtime and toolkit problems.",
 "System Software.DRIVER": "GPU kernel-driver problems.",
 "System Software.KERNEL": "Host operating-system kernel problems.",
 "Interconnect & Networking.NCCL": "Collective-communication library failures.",
 "Interconnect & Networking.NVLink": "Intra-node GPU interconnect faults.",
 "Interconnect & Networking.InfiniBand": "Inter-node InfiniBand fabric faults.",
 "Framework & Library.PyTorch": "PyTorch runtime faults.",
 "Framework & Library.Checkpoint": "Checkpoint save and load problems.",
 "Framework & Library.DeepSpeed": "DeepSpeed integration problems.",
 "User Application.Config": "Job configuration mistakes.",
 "User Application.Code": "Defects in the user's training code.",
 "User Application.Storage": "User storage usage problems.",
 "Other.Platform": "Platform services outside the node.",
}

def rule(r): return r

scripts, commands = [], []
for (sid, path, argv, r, dur, healthy, faults) in INTERNAL:
    scripts.append({"id": sid, "bound_path": path, "level": "Internal", "command": argv,
                    "timeout_secs": max(60.0, dur * 4), "success_rule": r})
    commands.append({"argv_prefix": argv, "duration_secs": dur,
                     "healthy": {"exit": healthy[0], "stdout": healthy[1]},
                     "faults": [{"tag": t, "exit": e, "stdout": o} for (t, e, o) in faults]})
created = {}
months = ["2023-01", "2023-02", "2023-04", "2023-05", "2023-07", "2023-09", "2023-11", "2024-01"]
for i, (path, desc, sid, argv, r, dur, healthy, faults) in enumerate(LEAVES):
    scripts.append({"id": sid, "bound_path": path, "level": "Leaf", "command": argv,
                    "timeout_secs": max(60.0, dur * 4), "success_rule": r})
    commands.append({"argv_prefix": argv, "duration_secs": dur,
                     "healthy": {"exit": healthy[0], "stdout": healthy[1]},
                     "faults": [{"tag": t, "exit": e, "stdout": o} for (t, e, o) in faults]})
commands.append({"argv_prefix": ["sleep"], "duration_secs": 30.0, "healthy": {"exit": 0, "stdout": ""}, "faults": []})

# taxonomy
def node(label, desc, origin, at):
    return {"label": label, "description": desc, "origin": origin, "created_at": at, "verification": [], "children": []}
roots = {m: node(m, d, "Manual", "2023-01-01T00:00:00Z") for m, d in MAIN.items()}
subs = {}
for i, (path, desc, *_rest) in enumerate(LEAVES):
    at = f"{months[i % len(months)]}-15T00:00:00Z"
    m, s, l = path.split(".")
    key = f"{m}.{s}"
    if key not in subs:
        subs[key] = node(s, SUBS[key], "IncidentDerived", at)
        roots[m]["children"].append(subs[key])
    subs[key]["children"].append(node(l, desc, "IncidentDerived", at))
for s in scripts:
    parts = s["bound_path"].split(".")
    n = roots[parts[0]]
    for p in parts[1:]:
        n = next(c for c in n["children"] if c["label"] == p)
    n["verification"].append(s["id"])
tax = {"version": 1, "nodes": list(roots.values())}

json.dump(tax, open(f"{OUT}/taxonomy.json", "w"), indent=2, ensure_ascii=False); open(f"{OUT}/taxonomy.json", "a").write("\n")
json.dump(scripts, open(f"{OUT}/scripts.json", "w"), indent=2, ensure_ascii=False); open(f"{OUT}/scripts.json", "a").write("\n")
json.dump({"commands": commands}, open(f"{OUT}/command_table.json", "w"), indent=2, ensure_ascii=False); open(f"{OUT}/command_table.json", "a").write("\n")
print(len(scripts), "scripts", len(LEAVES), "leaves")

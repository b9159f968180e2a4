"""Writes the 60-incident synthetic corpus and its scenarios."""
import json, os, random
from datetime import datetime, timedelta, timezone

ROOT = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", ".."))

rng = random.Random(20240611)

# leaf path -> (fault tag, [description templates], leaf command)
LEAVES = {
 "GPU.MEMORY.ECC Error": ("ecc_uncorrectable", [
   "Training job {job} on {node} aborted.\nnvidia-smi reports volatile uncorrectable ECC errors on GPU {gpu}.\nRuntimeError: CUDA error: uncorrectable ECC error encountered",
   "Pretraining run {job} crashed after {steps} steps on {node}.\ndmesg: NVRM: Xid (PCI:0000:{bus}:00): 63, ECC page retirement or row remapping\nCUDA error: uncorrectable ECC error encountered"],
   "nvidia-smi -q -d ECC"),
 "GPU.MEMORY.Page Retirement": ("page_retirement_pending", [
   "Job {job} on {node} sees degraded throughput on GPU {gpu}.\nnvidia-smi -q shows retired pages pending, Pending Page Blacklist: Yes.\nReboot requested by the scheduler health check",
   "GPU {gpu} on {node} flagged by health check: retired pages pending blacklist.\nJob {job} restarted twice, pending page retirement never cleared"],
   "nvidia-smi -q -d PAGE_RETIREMENT"),
 "GPU.MEMORY.infoROM_Corruption": ("inforom_corrupt", [
   "nvidia-smi on {node} prints WARNING: infoROM is corrupted at gpu 0000:{bus}:00.0.\nJob {job} fails to start on GPU {gpu}",
   "Node {node} rejected by the allocator.\nWARNING: infoROM is corrupted at gpu 0000:{bus}:00.0, job {job} cannot bind the device"],
   "nvidia-smi -q -d INFOROM"),
 "GPU.MEMORY.Memory_Diag_Failure": ("memory_diag_fail", [
   "Pre-job validation on {node} failed.\ndcgmi diag level 3 memory test fail on GPU {gpu}, job {job} not scheduled",
   "Job {job} hit random NaNs on {node}.\nDCGM memory bandwidth and memory test report failures on GPU {gpu}"],
   "dcgmi diag -r 3"),
 "GPU.XID.Xid 48": ("xid_48", [
   "Job {job} on {node} killed.\nkernel: NVRM: Xid (PCI:0000:{bus}:00): 48, pid={pid}, DBE (double bit error)",
   "Inference service {job} on {node} crashed.\nNVRM: Xid 48 double bit ECC error reported for GPU {gpu}"],
   "journalctl -k --grep 'Xid.*: 48,'"),
 "GPU.XID.Xid 79": ("xid_79", [
   "Training {job} hangs on {node}.\nkernel: NVRM: Xid (PCI:0000:{bus}:00): 79, GPU has fallen off the bus",
   "Node {node} lost GPU {gpu} mid-run for job {job}.\nNVRM: Xid 79 GPU has fallen off the bus, nvidia-smi hangs"],
   "journalctl -k --grep 'Xid.*: 79,'"),
 "GPU.EXECUTION.GPU_Missing": ("gpu_missing", [
   "Job {job} requested 8 GPUs on {node} but only 7 are visible.\nnvidia-smi -L lists 7 devices, torch.cuda.device_count() returns 7",
   "Allocation on {node} failed for {job}.\nExpected 8 GPUs, found 7: GPU {gpu} missing from nvidia-smi"],
   "nvidia-smi -L"),
 "System Software.CUDA.Illegal_Mem_Access": ("cuda_illegal_access", [
   "Job {job} on {node} crashed in a custom kernel.\nRuntimeError: CUDA error: an illegal memory access was encountered",
   "Fine-tuning {job} aborted on {node} at step {steps}.\nCUDA error: an illegal memory access was encountered (cudaErrorIllegalAddress)"],
   "compute-sanitizer --tool memcheck /opt/infradiag/probes/cuda_smoke"),
 "System Software.CUDA.CUDA_Runtime_Error": ("cuda_runtime_error", [
   "Job {job} on {node} fails at startup.\nCUDA error: unspecified launch failure in cudaLaunchKernel",
   "Evaluation {job} on {node} crashes on the first batch.\ncudaErrorLaunchFailure: unspecified launch failure"],
   "infradiag-probe cuda-smoke"),
 "System Software.CUDA.Host_VM_Version_Mismatch": ("cuda_version_mismatch", [
   "Job {job} on VM {node} fails to initialize CUDA.\nCUDA driver version is insufficient for CUDA runtime version, host and guest toolkits differ",
   "Container for {job} on {node} cannot use the GPUs.\ncudaErrorInsufficientDriver: CUDA driver version is insufficient for CUDA runtime version"],
   "nvcc --version"),
 "System Software.DRIVER.Driver_Version_Mismatch": ("driver_version_mismatch", [
   "nvidia-smi on {node} fails: Failed to initialize NVML: Driver/library version mismatch.\nJob {job} cannot start",
   "After a node image update {node} reports NVML: Driver/library version mismatch.\nAll jobs including {job} fail"],
   "modinfo -F version nvidia"),
 "System Software.KERNEL.Soft_Lockup": ("kernel_soft_lockup", [
   "Node {node} became unresponsive during {job}.\nkernel: watchdog: BUG: soft lockup - CPU#{cpu} stuck for 22s",
   "Job {job} stalls, ssh to {node} times out.\nwatchdog: BUG: soft lockup - CPU#{cpu} stuck for 23s in the kernel log"],
   "journalctl -k --grep 'soft lockup'"),
 "Interconnect & Networking.NCCL.NCCL_Error": ("nccl_connect_refused", [
   "Distributed job {job} fails at init on {node}.\nNCCL WARN Connect to 10.0.{a}.{b}<{port}> failed : Connection refused\nncclSystemError: System call failed",
   "Rank {rank} of {job} on {node} exits during rendezvous.\nNCCL WARN socketStartConnect: Connect failed : Connection refused"],
   "all_reduce_perf -b 1M -e 1M -g 8 -c 1"),
 "Interconnect & Networking.NCCL.NCCL_Timeout": ("nccl_timeout", [
   "Job {job} hangs then dies on {node}.\nWatchdog caught collective operation timeout: WorkNCCL(SeqNum={seq}, OpType=ALLREDUCE) ran for 1800000 milliseconds before timing out",
   "Rank {rank} of {job} timed out.\nProcessGroupNCCL watchdog: collective operation timeout after 1800000 ms, ALLREDUCE"],
   "infradiag-probe nccl-watchdog"),
 "Interconnect & Networking.NVLink.NVLink_Failure": ("nvlink_inactive", [
   "Job {job} on {node} runs at a fraction of expected allreduce bandwidth.\nnvidia-smi nvlink -s shows link {link} inactive on GPU {gpu}",
   "Intra-node collectives of {job} on {node} slow.\nNVLink link {link} of GPU {gpu} reported as inactive, traffic falls back to PCIe"],
   "nvidia-smi nvlink -s"),
 "Interconnect & Networking.InfiniBand.IB_Link_Down": ("ib_link_down", [
   "Multi-node job {job} cannot reach {node}.\nibstat: mlx5_0 port 1 State: Down, Physical state: Disabled",
   "Cross-node NCCL traffic of {job} stalls on {node}.\nInfiniBand port mlx5_0/1 link down, ibstat shows State: Down"],
   "ibstat mlx5_0"),
 "Interconnect & Networking.InfiniBand.HCA_Misconfig": ("ib_hca_misconfig", [
   "RDMA throughput for {job} on {node} is low.\nibv_devinfo reports link_layer Ethernet on mlx5_0, expected InfiniBand",
   "NCCL on {node} falls back to sockets for {job}.\nHCA mlx5_0 configured with the wrong link layer"],
   "ibv_devinfo -d mlx5_0"),
 "Framework & Library.PyTorch.CUDA_Allocator_Error": ("torch_allocator", [
   "Job {job} on {node} fails with an allocator assertion.\nRuntimeError: CUDACachingAllocator: INTERNAL ASSERT FAILED",
   "Training {job} crashes after resuming on {node}.\nc10::Error CUDACachingAllocator internal assert failed in block free"],
   "infradiag-probe torch-alloc"),
 "Framework & Library.Checkpoint.Checkpoint_Corruption": ("ckpt_corrupt", [
   "Resume of {job} from step {steps} fails on {node}.\nRuntimeError: PytorchStreamReader failed reading zip archive: failed finding central directory",
   "Job {job} cannot load its latest checkpoint.\nshard {shard} checksum mismatch, PytorchStreamReader failed reading zip archive"],
   "infradiag-probe ckpt-load --verify-shards"),
 "Framework & Library.DeepSpeed.Version_Incompatibility": ("deepspeed_incompat", [
   "Job {job} on {node} fails at import.\nImportError: deepspeed ops were built against a different torch version",
   "DeepSpeed engine init of {job} fails.\nversion mismatch: installed deepspeed is incompatible with torch in the image"],
   "infradiag-probe pkg-version deepspeed"),
 "User Application.Config.Bad_Launch_Args": ("user_bad_args", [
   "Job {job} exits immediately on {node}.\ntrain.py: error: unrecognized arguments: --grad-accum {steps}",
   "Launcher for {job} fails.\nValueError: world_size mismatch between torchrun --nproc_per_node and the config"],
   "infradiag-probe launch-args"),
 "User Application.Code.OOM_Batch_Size": ("user_oom", [
   "Job {job} on {node} fails at step 1.\ntorch.OutOfMemoryError: CUDA out of memory. Tried to allocate 4.00 GiB with batch size {batch}",
   "After raising the batch size to {batch}, {job} dies.\nCUDA out of memory. Tried to allocate 2.50 GiB on GPU {gpu}"],
   "infradiag-probe mem-budget"),
 "User Application.Storage.Quota_Exceeded": ("user_quota", [
   "Job {job} fails writing checkpoints on {node}.\nOSError: [Errno 122] Disk quota exceeded: /scratch/{job}",
   "Training {job} stops saving outputs.\nwrite failed: Disk quota exceeded on /scratch"],
   "df -h /scratch"),
 "Other.Platform.Scheduler_Failure": ("scheduler_down", [
   "Job {job} stuck in pending for hours.\nscheduler: node {node} not responding, allocation request timed out",
   "Submission of {job} fails.\nerror: scheduler controller unreachable, unable to contact slurmctld"],
   "infradiag-probe scheduler-status"),
 "Other.Platform.Storage_Mount_Failure": ("storage_mount_lost", [
   "Job {job} on {node} cannot read its dataset.\nls: cannot access '/mnt/shared/{job}': Transport endpoint is not connected",
   "Data loader of {job} fails on {node}.\nstale file handle on /mnt/shared, shared mount lost"],
   "findmnt /mnt/shared"),
}

CATS = ["GPU", "System Software", "Interconnect & Networking", "Framework & Library", "User Application", "Other"]

def fill(t, i):
    return t.format(job=f"job-{1000 + i}", node=f"gpu-node-{rng.randint(1, 64):02d}", gpu=rng.randint(0, 7),
                    bus=f"{rng.randint(16, 250):02x}", pid=rng.randint(1000, 99999), steps=rng.randint(100, 90000),
                    cpu=rng.randint(0, 95), a=rng.randint(0, 9), b=rng.randint(2, 250), port=rng.randint(30000, 60000),
                    rank=rng.randint(0, 63), seq=rng.randint(100, 9999), link=rng.randint(0, 11), shard=rng.randint(0, 63),
                    batch=rng.choice([64, 128, 256]))

records, scenarios = [], {}
i = 0
for cat in CATS:
    leaves = [l for l in LEAVES if l.split(".")[0] == cat]
    for k in range(10):
        leaf = leaves[k % len(leaves)]
        fault, templates, cmd = LEAVES[leaf]
        i += 1
        iid = f"syn-{i:03d}"
        created = datetime(2024, 1, 1, tzinfo=timezone.utc) + timedelta(days=rng.randint(0, 360), hours=rng.randint(0, 23), minutes=rng.randint(0, 59))
        ttm = round(rng.uniform(0.5, 150.0), 2)
        desc = fill(templates[(k // len(leaves)) % len(templates)], i)
        label = leaf.split(".")[-1]
        records.append({
            "id": iid,
            "description": desc,
            "oce_discussion": f"OCE checked the node with `{cmd}` and saw the failure.\nRoot cause: {leaf}\nMitigation: node drained and repaired.",
            "root_cause": leaf,
            "created_at": created.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "resolved_at": (created + timedelta(hours=ttm)).strftime("%Y-%m-%dT%H:%M:%SZ"),
        })
        scenarios[iid] = {"faults": [fault]}

records.sort(key=lambda r: (r["created_at"], r["id"]))
with open(os.path.join(ROOT, "data/synthetic/incidents.jsonl"), "w") as f:
    for r in records:
        f.write(json.dumps(r) + "\n")
with open(os.path.join(ROOT, "data/synthetic/scenarios.json"), "w") as f:
    json.dump(scenarios, f, indent=2, sort_keys=True)
    f.write("\n")
print(len(records))

"""Writes the two golden incidents with their scenarios, replies and miss corpus."""
import json, os

ROOT = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", ".."))

def fence(v):
    return "```json\n" + json.dumps(v, indent=2) + "\n```"

def write(dirname, incident, scenario, replies):
    d = os.path.join(ROOT, "data/golden", dirname)
    json.dump(incident, open(f"{d}/incident.json", "w"), indent=2); open(f"{d}/incident.json", "a").write("\n")
    json.dump(scenario, open(f"{d}/scenario.json", "w"), indent=2); open(f"{d}/scenario.json", "a").write("\n")
    with open(f"{d}/replay.jsonl", "w") as f:
        for summary, text in replies:
            f.write(json.dumps({"digest": None, "request_summary": summary, "response_text": text}) + "\n")

IN = "Interconnect & Networking"
ex1 = {
  "id": "golden-nccl-refused",
  "description": "Job job-5521 (4 nodes x 8 GPUs) exits during NCCL initialization.\nRank 0 log:\n| batch-runn | [4] job-5521:684:1526 [0] include/socket.h:406 NCCL WARN Connect to 10.2.0.17<45021> failed : Connection refused\nResubmitted several times; the failing rank is always placed on host gpu-node-17.",
  "created_at": "2024-09-12T03:10:00Z",
}
write("example1", ex1, {"faults": ["nvlink_inactive"]}, [
  ("summarization", "Multi-node job job-5521 fails in NCCL init: rank 0 gets 'NCCL WARN Connect to 10.2.0.17<45021> failed : Connection refused' from include/socket.h:406. Every retry fails on host gpu-node-17."),
  ("planning: root", "The failure is a collective connection error, so the network path comes first; a broken CUDA stack or user launch settings could also stop rendezvous.\n" + fence([IN, "System Software", "User Application"])),
  ("planning: " + IN, "ev-1 and ev-3 fail (collective bandwidth and NVLink topology). NCCL and NVLink fit; InfiniBand checks pass.\n" + fence([f"{IN}.NCCL", f"{IN}.NVLink"])),
  ("planning: " + IN + ".NCCL", fence([f"{IN}.NCCL.NCCL_Error"])),
  ("reflection: NCCL_Error", fence({"decision": "Confirmed", "rationale": "the single-size allreduce probe fails to connect on all ranks", "evidence_ids": ["ev-5"]})),
  ("planning: " + IN + ".NVLink", fence([f"{IN}.NVLink.NVLink_Failure"])),
  ("reflection: NVLink_Failure", fence({"decision": "Confirmed", "rationale": "nvidia-smi nvlink -s reports inactive links on GPU 1", "evidence_ids": ["ev-6"]})),
  ("planning: System Software", fence(["System Software.CUDA"])),
  ("planning: System Software.CUDA", fence(["System Software.CUDA.CUDA_Runtime_Error"])),
  ("reflection: CUDA_Runtime_Error", fence({"decision": "Rejected", "rationale": "the CUDA smoke kernel runs cleanly", "evidence_ids": ["ev-11"]})),
  ("planning: User Application", "The user end-to-end check passes and the launch is identical to earlier healthy runs.\n" + fence([])),
  ("conclusion", "Primary root cause: inactive NVLink links on GPU 1 of gpu-node-17, which break the NCCL transport and surface as connection refused during rendezvous. Drain the node and reseat or replace the NVLink bridge."),
])

ex2 = {
  "id": "golden-ecc-uncorrectable",
  "description": "node-92: Traceback (most recent call last):\nnode-92:   File \"pretrain_gpt2.py\", line 227, in <module>\nnode-92: RuntimeError: CUDA error: CUBLAS_STATUS_EXECUTION_FAILED when calling `cublasGemmEx(...)`\nnode-92: terminate called after throwing an instance of 'c10::Error'\nnode-92:   what():  CUDA error: uncorrectable ECC error encountered\nnode-92: CUDA kernel errors might be asynchronously reported at some other API call.",
  "created_at": "2024-10-03T21:45:00Z",
}
write("example2", ex2, {"faults": ["ecc_uncorrectable", "xid_48"]}, [
  ("summarization", "GPT-2 pretraining on node-92 aborts: cublasGemmEx fails with CUBLAS_STATUS_EXECUTION_FAILED, then c10::Error reports 'CUDA error: uncorrectable ECC error encountered'. Errors may be reported asynchronously, so the failing kernel is unknown."),
  ("planning: root", "An uncorrectable ECC error points at GPU memory; the cuBLAS failure could also come from the framework or the CUDA stack.\n" + fence(["GPU", "Framework & Library", "System Software"])),
  ("planning: GPU", "ev-4 (dcgmi diag) fails. Memory and Xid history are the likely areas; device presence checks pass.\n" + fence(["GPU.MEMORY", "GPU.XID"])),
  ("planning: GPU.MEMORY", fence(["GPU.MEMORY.ECC Error", "GPU.MEMORY.Page Retirement"])),
  ("reflection: ECC Error", fence({"decision": "Confirmed", "rationale": "double bit volatile ECC counters are non-zero", "evidence_ids": ["ev-5"]})),
  ("reflection: Page Retirement", fence({"decision": "Confirmed", "rationale": "pages retired after the double bit error, blacklist pending", "evidence_ids": ["ev-6"]})),
  ("planning: GPU.XID", fence(["GPU.XID.Xid 48"])),
  ("reflection: Xid 48", fence({"decision": "Confirmed", "rationale": "kernel log holds Xid 48 for this GPU", "evidence_ids": ["ev-7"]})),
  ("planning: Framework & Library", fence(["Framework & Library.PyTorch"])),
  ("planning: Framework & Library.PyTorch", fence(["Framework & Library.PyTorch.CUDA_Allocator_Error"])),
  ("reflection: CUDA_Allocator_Error", fence({"decision": "Rejected", "rationale": "allocator probe passes", "evidence_ids": ["ev-12"]})),
  ("planning: System Software", "ev-15 (dmesg) only repeats the Xid already explained under GPU.\n" + fence([])),
  ("conclusion", "Primary root cause: uncorrectable ECC error in GPU memory on node-92. Related findings: page retirement pending and Xid 48 follow from the same double bit error. Reboot to retire the pages and replace the GPU if errors recur."),
])

corpus = [
  ("hist-quota", "Checkpoint write fails: OSError: [Errno 122] Disk quota exceeded: /scratch/team-a", "User Application.Storage.Quota_Exceeded", "2024-02-03T10:00:00Z"),
  ("hist-sched", "Jobs pending for six hours, scheduler controller unreachable", "Other.Platform.Scheduler_Failure", "2024-03-11T08:30:00Z"),
  ("hist-args", "train.py: error: unrecognized arguments: --grad-accum 8", "User Application.Config.Bad_Launch_Args", "2024-04-19T14:12:00Z"),
  ("hist-mount", "Data loader cannot read /mnt/shared: Transport endpoint is not connected", "Other.Platform.Storage_Mount_Failure", "2024-05-27T16:45:00Z"),
]
with open(os.path.join(ROOT, "data/golden/corpus.jsonl"), "w") as f:
    for i, d, l, c in corpus:
        f.write(json.dumps({"id": i, "description": d, "root_cause": l, "created_at": c}) + "\n")

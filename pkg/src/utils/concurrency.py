"""
并发控制管理器
把同步的解码任务放进线程，按信号量限流执行；结果顺序与输入一致
"""

import asyncio
import logging
from typing import Any, Callable, Dict, List, Optional, Tuple, Type

logger = logging.getLogger(__name__)


class ConcurrencyManager:
    """
    并发控制管理器

    功能：
    1. 基于 asyncio.Semaphore 的并发限流
    2. 同步任务通过 asyncio.to_thread 执行（每个任务只读参数快照）
    3. 批量任务执行与错误隔离
    """

    DECODE_MAX_CONCURRENCY = 8
    DECODE_BATCH_SIZE = 256

    def __init__(self, max_concurrency: Optional[int] = None, batch_size: Optional[int] = None):
        """
        初始化并发管理器

        Args:
            max_concurrency: 最大并发数，如果未指定则使用默认值
            batch_size: execute_in_batches 的默认批次大小
        """
        self.max_concurrency = max_concurrency or self.DECODE_MAX_CONCURRENCY
        self.batch_size = batch_size or self.DECODE_BATCH_SIZE
        logger.debug(f"ConcurrencyManager 初始化: max_concurrency={self.max_concurrency}")

    async def execute_batch(
        self,
        tasks: List[Callable[[], Any]],
        max_concurrency: Optional[int] = None,
        return_exceptions: bool = False
    ) -> List[Any]:
        """
        带限流的批量执行

        Args:
            tasks: 同步任务函数列表（无参数）
            max_concurrency: 最大并发数（覆盖实例配置）
            return_exceptions: 是否返回异常而不是抛出

        Returns:
            任务执行结果列表（与 tasks 顺序一致）
        """
        semaphore = asyncio.Semaphore(max_concurrency or self.max_concurrency)

        async def limited_task(task: Callable[[], Any]) -> Any:
            async with semaphore:
                return await asyncio.to_thread(task)

        results = await asyncio.gather(
            *[limited_task(task) for task in tasks],
            return_exceptions=return_exceptions
        )

        failed_count = sum(1 for r in results if isinstance(r, Exception))
        logger.debug(f"批量执行完成: total={len(results)}, failed={failed_count}")
        return list(results)

    async def execute_batch_with_isolation(
        self,
        tasks: List[Callable[[], Any]],
        max_concurrency: Optional[int] = None,
        expected: Tuple[Type[BaseException], ...] = (Exception,),
    ) -> List[Dict[str, Any]]:
        """
        带错误隔离的批量执行：单句失败只影响该句

        Args:
            tasks: 同步任务函数列表
            max_concurrency: 最大并发数
            expected: 被隔离的异常类型，其余异常照常抛出

        Returns:
            与 tasks 顺序一致的结果，每个元素为
            {"success": bool, "data": Any, "error": str | None, "error_type": str | None}
        """
        semaphore = asyncio.Semaphore(max_concurrency or self.max_concurrency)

        async def isolated_task(task: Callable[[], Any]) -> Dict[str, Any]:
            async with semaphore:
                try:
                    result = await asyncio.to_thread(task)
                    return {"success": True, "data": result, "error": None, "error_type": None}
                except expected as e:
                    return {"success": False, "data": None, "error": str(e), "error_type": type(e).__name__}

        results = await asyncio.gather(*[isolated_task(task) for task in tasks])
        failed = sum(1 for r in results if not r["success"])
        logger.debug(f"隔离批量执行完成: total={len(results)}, failed={failed}")
        return list(results)

    async def execute_in_batches(
        self,
        tasks: List[Callable[[], Any]],
        batch_size: Optional[int] = None,
        max_concurrency: Optional[int] = None,
        expected: Optional[Tuple[Type[BaseException], ...]] = None,
    ) -> List[Any]:
        """
        分批次执行任务，适用于整份语料的逐句解码

        expected 不为 None 时每批走 execute_batch_with_isolation，返回隔离格式的结果
        """
        batch_size = batch_size or self.batch_size
        all_results: List[Any] = []
        total_batches = (len(tasks) + batch_size - 1) // batch_size

        for i in range(0, len(tasks), batch_size):
            batch = tasks[i:i + batch_size]
            logger.debug(f"执行批次 {i // batch_size + 1}/{total_batches}: {len(batch)} 个任务")
            if expected is None:
                all_results.extend(await self.execute_batch(batch, max_concurrency=max_concurrency))
            else:
                all_results.extend(
                    await self.execute_batch_with_isolation(batch, max_concurrency=max_concurrency, expected=expected)
                )

        return all_results

    def run(
        self,
        tasks: List[Callable[[], Any]],
        expected: Optional[Tuple[Type[BaseException], ...]] = None,
    ) -> List[Any]:
        """同步入口：在没有运行中事件循环的地方（CLI、训练循环）执行 execute_in_batches"""
        return asyncio.run(self.execute_in_batches(tasks, expected=expected))

    @classmethod
    def for_decode(cls) -> "ConcurrencyManager":
        """按运行时配置创建解码用的并发管理器"""
        from src.core.config import runtime_settings
        return cls(
            max_concurrency=runtime_settings.decode_max_concurrency,
            batch_size=runtime_settings.decode_chunk_size,
        )
